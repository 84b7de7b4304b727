//! Input data: the synthetic benchmark generator, sensor-table ingestion,
//! first-principal-component fusion, and a run-to-failure fleet simulator.

pub mod fleet;
pub mod pca;
pub mod sensor;
pub mod synthetic;

pub use fleet::{generate_fleet, Fleet, FleetConfig};
pub use pca::{default_columns, fit_pca, fpc_transform, PcaRule};
pub use sensor::{load_rul_file, SensorTable, UnitRecord};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticConfig};
