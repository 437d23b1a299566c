//! Table structure recognition on graphs of cell boxes.
//!
//! Cells become nodes of a table graph; row and column GCNs with ordinal
//! heads predict each cell's logical location. Around the model sit
//! segmentation-map cell detection, a synthetic table generator, evaluation
//! metrics and export to CSV, XML and HTML.

pub mod datagen;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod segmap;
pub mod spatial;
pub mod table;
pub mod transform;

pub use error::{Error, Result};
pub use table::{CellNode, CenterBox, CornerBox, LogicalLocation, TableGraph};
