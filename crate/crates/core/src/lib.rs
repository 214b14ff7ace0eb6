//! Estimating long-term PM2.5 exposure from satellite imagery with small
//! convolutional networks trained from scratch.
//!
//! The crate covers the whole pipeline: site ingestion ([`ingest`]),
//! geohashing and Web-Mercator math ([`geo`]), tile acquisition and
//! synthetic tiles ([`tiles`]), geohash-disjoint datasets ([`dataset`]),
//! tensors and autodiff ([`nn`]), the two convolutional bases ([`models`]),
//! optimisers and the training loop ([`train`]) and evaluation ([`eval`]).

pub mod dataset;
pub mod geo;
pub mod ingest;
pub mod nn;
pub mod tiles;
pub mod eval;
pub mod models;
pub mod train;
