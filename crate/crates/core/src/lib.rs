pub mod assembly;
pub mod block;
pub mod map_graph;
pub mod mutation;
pub mod oracle;
pub mod params;
pub mod pipeline;
pub mod placement;
pub mod report_extraction;
pub mod scenario_gen;
pub mod schema_model;
pub mod xml;
