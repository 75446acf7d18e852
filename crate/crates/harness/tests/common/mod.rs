#![allow(dead_code)]

use std::path::Path;

use dogfight_core::arena::TaskKind;
use dogfight_harness::{Algorithm, ProtocolKind, RunConfig};

/// Short episodes and tiny networks so whole runs finish in seconds.
pub fn small_config(task: TaskKind, protocol: ProtocolKind, algorithm: Algorithm, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(task, protocol, algorithm);
    cfg.out_dir = out.to_path_buf();
    cfg.seeds = vec![7];
    cfg.total_timesteps = 240;
    cfg.rollout_length = 40;
    cfg.num_envs = 2;
    cfg.eval_interval = 160;
    cfg.eval_episodes = 2;
    cfg.log_interval = 40;
    cfg.env.max_decision_steps = 60;
    cfg.happo.hidden = vec![16];
    cfg.happo.epochs = 2;
    cfg.happo.minibatches = 2;
    cfg.hasac.hidden = vec![16];
    cfg.hasac.batch_size = 16;
    cfg.hasac.warmup_steps = 40;
    cfg.hasac.updates_per_step = 0.25;
    cfg
}
