pub mod cli;
pub mod embedding;
pub mod evalkit;
pub mod neuralnet;
pub mod segmenter;
pub mod server;
pub mod synthetic;
pub mod textcore;
