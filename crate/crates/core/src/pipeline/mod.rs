//! Run configuration and the commands behind the CLI. Every command writes
//! into a run directory that starts with the resolved `config.json`.

mod commands;
mod config;
mod data;
pub mod render;

pub use commands::{
    apply_sweep_value, cmd_concat_demo, cmd_eval, cmd_pretrain, cmd_project, cmd_selftrain, cmd_stats, cmd_sweep,
    cmd_synth_gen, csv_header, csv_row, open_run_dir, ProjectSummary, PseudoSidecar, RoundSummary, SelftrainSummary,
    SetStats, Split, SweepAxis, SweepRow, TrainSummary, CONFIG_ECHO,
};
pub use config::{
    desk_shift, ConcatConfig, DomainsConfig, MixingChoice, Precision, RunConfig, TemplateChoice, PRESETS,
};
pub use data::{generate_domains, load_domains, read_domains, read_manifest, write_domains, Domains, Manifest, ManifestSet, MANIFEST, SET_NAMES};

/// Size the global worker pool. Results do not depend on the count: every
/// parallel reduction runs in a fixed order.
pub fn configure_threads(threads: usize) -> crate::Result<()> {
    if threads == 0 {
        return Err(crate::Error::Config("thread count must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))
}
