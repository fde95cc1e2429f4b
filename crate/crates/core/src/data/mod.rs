//! Masked time-series containers, standardization, CSV ingestion,
//! synthetic generation and hold-out masking.

mod csv_io;
mod holdout;
mod series;
mod standardize;
mod synthetic;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv, CsvSchema};
pub use holdout::{make_holdout, HoldoutMask};
pub use series::{Dataset, MaskedTimeSeries, Split};
pub use standardize::{standardize, unstandardize, FeatureStats};
pub use synthetic::{generate_synthetic, Mechanism, MissingMechanismConfig, SyntheticConfig, SyntheticData};
