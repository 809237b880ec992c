//! Desk-scale experiments on synthetic class-motif data.

mod data;
mod eval;
mod experiments;

pub use data::{
    generate_dataset, load_labeled, load_unlabeled, motif, nearest_motif, read_manifest, redact,
    resolve_path, write_dataset, write_manifest, Dataset, LabeledImage, ManifestRow,
    SyntheticDatasetSpec, MOTIF_CELLS,
};
pub use eval::{evaluate, evaluate_teacher, harmonic_mean, EvalReport, SplitPlan};
pub use experiments::{
    ablation_csv, motif_embedding, run_ablation, run_base_to_new, run_cross_dataset,
    sample_per_class, sweep_key, unlabeled, RunOutput,
};
