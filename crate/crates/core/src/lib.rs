pub mod classifier;
pub mod dataset;
pub mod experiment;
pub mod fusion;
pub mod imaging;
pub mod pca;
pub mod tracking;
