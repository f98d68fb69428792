pub mod attribution;
pub mod evidence;
pub mod governance;
pub mod harness;
pub mod example;
pub mod jsonl;
pub mod metrics;
pub mod probes;
pub mod retrieval;
pub mod rng;
pub mod serialization;
pub mod sql;
pub mod table;
