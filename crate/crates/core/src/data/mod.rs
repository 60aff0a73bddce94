//! Dataset schema, synthetic generation, splitting, configuration and
//! on-disk formats.

mod config;
mod io;
mod persist;
mod records;
mod synthetic;

pub use config::RunConfig;
pub use io::{
    default_split_date, load_dataset, read_placements, read_sales, train_test_split, write_placements, write_sales,
    PLACEMENTS_HEADER, SALES_HEADER,
};
pub use persist::{
    read_posterior, read_qnet, write_posterior, write_qnet, PosteriorHeader, QNetHeader, POSTERIOR_MAGIC, QNET_MAGIC,
};
pub use records::{day_of_week, Dataset, PlacementRecord, SalesRecord};
pub use synthetic::{
    default_prices, feedback_gain, generate_synthetic, read_env_file, write_synthetic, BoardSchedule, EnvFile,
    SyntheticData, SyntheticSpec, TruthSource, ENV_FILE, PLACEMENTS_FILE, SALES_FILE, TRUTH_FILE,
};
