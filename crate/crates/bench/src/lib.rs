//! Shared inputs for the benchmarks.

use ngcl_core::signalio::{synth_var_recording, Coupling};
use ngcl_core::synth::{synth_graph_dataset, SynthSpec};
use ngcl_core::{BrainGraph, Label, Segment};

/// One 2 s window of a chain-coupled VAR process at 500 Hz.
pub fn var_window(channels: usize, seed: u64) -> Segment {
    let couplings: Vec<Coupling> = (0..channels - 1).map(|c| Coupling::new(c, c + 1, 1, 0.4)).collect();
    let rec = synth_var_recording(&couplings, channels, 500.0, 2.0, 1.0, seed).expect("stable VAR");
    Segment {
        samples: rec.samples,
        fs: 500.0,
        label: Label::Interictal,
    }
}

pub fn graphs(n_per_class: usize, nodes: usize) -> Vec<BrainGraph> {
    synth_graph_dataset(&SynthSpec {
        n_per_class,
        nodes,
        soz_size: nodes / 5,
        noise: 0.3,
        seed: 0,
    })
    .expect("valid synthetic spec")
}
