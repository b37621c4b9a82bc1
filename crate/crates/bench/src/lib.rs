//! Shared fixtures for the criterion benchmarks.

use netgnn_core::graph::{hop_count_routing, random_topology, RoutingScheme, Topology};
use netgnn_core::model::{InstanceEncoding, ModelConfig, ModelParams};
use netgnn_core::traffic::{generate_tm, TrafficIntensity, TrafficMatrix};

/// One 8-node instance at traffic intensity 12 with hop-count routing.
pub struct Instance {
    pub topology: Topology,
    pub routing: RoutingScheme,
    pub tm: TrafficMatrix,
    pub encoding: InstanceEncoding,
}

pub fn instance(nodes: usize, seed: u64) -> Instance {
    let topology = random_topology(nodes, nodes / 2, 10.0, seed).expect("topology");
    let routing = hop_count_routing(&topology).expect("routing");
    let tm = generate_tm(nodes, TrafficIntensity::new(12.0).expect("ti"), seed).expect("traffic matrix");
    let encoding = InstanceEncoding::from_routing(&topology, &routing, &tm, tm.max_entry()).expect("encoding");
    Instance {
        topology,
        routing,
        tm,
        encoding,
    }
}

/// Default-sized model with a fixed init seed.
pub fn params() -> ModelParams<f32> {
    ModelParams::new(ModelConfig::default()).expect("default config is valid")
}
