pub mod bench;
pub mod builder;
pub mod document;
pub mod dot;
pub mod engine;
pub mod graph;
pub mod memory;
pub mod nodes;
pub mod predicate;
pub mod value;
