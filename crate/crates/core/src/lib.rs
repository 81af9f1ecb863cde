//! Virtual-admittance grid-forming inverter analysis: transfer-function
//! evaluation, equivalent output impedance and passivity, sampled-data
//! simulation, frequency scanning and spectra.

pub mod config;
pub mod impedance;
pub mod measurement;
pub mod models;
pub mod report;
pub mod sim;
pub mod tf;

pub use tf::{Complex, FrequencyGrid, FrequencyResponse, TfError, TransferElement};
