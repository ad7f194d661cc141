//! Teacher-student label distillation and the synthetic-data experiments.

mod assemble;
mod experiment;
mod pseudo;
mod synth;

pub use assemble::assemble_dataset;
pub use experiment::{
    ablation_cells, compute_cell, label_cells, median, ratio_cells, run_bp_ablation, run_cells,
    run_label_comparison, run_ratio_experiment, run_tstart_sweep, tstart_cells, Cell, ExperimentConfig,
    ExperimentInputs, LabelSource, ResultRow, ResultsTable, RESULTS_HEADER,
};
pub use pseudo::{pseudo_label, PseudoLabels, SKIP_LOG};
pub use synth::{sample_seeds, synthesize_dataset, SynthConfig};
