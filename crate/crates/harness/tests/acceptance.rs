//! Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if a gating one fails.
//!
//! Run with `cargo test -p dogfight-harness --test acceptance`.

mod common;

use std::f64::consts::FRAC_PI_2;
use std::process::ExitCode;
use std::time::Instant;

use common::small_config;
use dogfight_core::airframe::AircraftState;
use dogfight_core::arena::TaskKind;
use dogfight_core::ordnance::{launch_missile, simulate_engagement, MissileConfig, MissileStatus};
use dogfight_core::rewards::{altitude_reward, event_reward, CombatEvent, RewardConfig};
use dogfight_core::vec3::Vec3;
use dogfight_harness::metrics::read_metrics;
use dogfight_harness::policy::{policy_head, Pilot};
use dogfight_harness::training::{run_dir, train_seed, CONFIG_FILE, METRICS_FILE};
use dogfight_harness::{evaluate, run_training, Algorithm, MetricsWriter, ProtocolKind, RunConfig, Trainer};
use dogfight_learn::happo::{actor_loss, surrogate_objective, ActorBatch, HappoConfig, HappoTeam, RolloutBuffer, RolloutStep};
use dogfight_learn::hasac::{
    discrete_actor_objective, gaussian_actor_objective, soft_value, JointLayout, ReplayBuffer, SoftCritics,
};
use dogfight_learn::neural::{mse_loss, Actor, GaussianHead, Matrix, Mlp, MultiDiscreteHead, PolicyAction, PolicyHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Outcome of one criterion: pass flag plus a one-line detail.
type Verdict = (bool, String);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn event_exactness() -> Verdict {
    let cfg = RewardConfig::default();
    let cases = [
        (event_reward(&[CombatEvent::shot_down(0, 1)], 0, &cfg), -200.0),
        (event_reward(&[CombatEvent::crash(0)], 0, &cfg), -200.0),
        (event_reward(&[CombatEvent::kill(0, 1)], 0, &cfg), 200.0),
    ];
    let ok = cases.iter().all(|(got, want)| got.to_bits() == f64::to_bits(*want));
    (ok, format!("shot-down {}, crash {}, kill {}", cases[0].0, cases[1].0, cases[2].0))
}

fn altitude_range() -> Verdict {
    let cfg = RewardConfig::default();
    let mut r = rng(1);
    let mut ok = true;
    for _ in 0..100_000 {
        let alt = r.gen_range(-500.0..9000.0);
        let speed = r.gen_range(0.0..400.0);
        let s = AircraftState::new(Vec3::new(0.0, 0.0, alt), r.gen_range(-3.0..3.0), r.gen_range(-0.5..0.5), speed);
        // at the safe speed only the height term remains; the speed term is the rest
        let height_only = altitude_reward(&AircraftState { airspeed: cfg.safe_speed, ..s }, &cfg);
        let total = altitude_reward(&s, &cfg);
        let speed_only = total - height_only;
        ok &= (-1.0..=0.0).contains(&speed_only) && (-1.0..=0.0).contains(&height_only);
        ok &= (-2.0..=0.0).contains(&total);
        if alt >= cfg.safe_altitude {
            ok &= total == 0.0;
        }
    }
    (ok, "100000 random states".into())
}

fn surrogate_table() -> Verdict {
    let mut cases = vec![(1.5, 1.0, 0.2, 1.2), (1.5, -1.0, 0.2, -1.5), (0.5, 1.0, 0.2, 0.5), (0.5, -1.0, 0.2, -0.8)];
    cases.extend([-3.0, -0.7, 0.0, 0.4, 2.5].map(|m| (1.0, m, 0.2, m)));
    let worst = cases.iter().map(|&(r, m, e, want)| (surrogate_objective(r, m, e) - want).abs()).fold(0.0, f64::max);
    (worst <= 1e-12, format!("max abs error {worst:.1e}"))
}

fn one_hot(s: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i == s { 1.0 } else { 0.0 }).collect()
}

fn sequential_factor_oracle() -> Verdict {
    const STATES: usize = 3;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut r = rng(seed);
        let head = || PolicyHead::Discrete(MultiDiscreteHead::new(&[2]).unwrap());
        let cfg = HappoConfig { hidden: vec![], epochs: 3, minibatches: 2, actor_lr: 0.05, normalize_advantages: false, ..HappoConfig::default() };
        let mut team = HappoTeam::new(STATES, vec![head(), head()], 2 * STATES, cfg, &mut r).unwrap();
        for a in &mut team.actors {
            a.params.iter_mut().for_each(|p| *p = r.gen_range(-1.0..1.0));
        }
        let mut buf = RolloutBuffer::new(2);
        let mut states = Vec::new();
        for _ in 0..24 {
            let s = r.gen_range(0..STATES);
            let obs = vec![one_hot(s, STATES), one_hot(s, STATES)];
            let (a0, l0) = team.act(0, &obs[0], &mut r).unwrap();
            let (a1, l1) = team.act(1, &obs[1], &mut r).unwrap();
            let critic_obs = obs.concat();
            let value = team.value(&critic_obs).unwrap();
            let step = RolloutStep {
                obs,
                actions: vec![a0, a1],
                log_probs: vec![l0, l1],
                active: vec![true, true],
                critic_obs,
                value,
                reward: r.gen_range(-1.0..1.0),
                done: true,
            };
            buf.push(step).unwrap();
            states.push(s);
        }
        buf.end_segment(0.0);
        buf.finish(0.99, 0.95).unwrap();
        let table = |team: &HappoTeam, k: usize| -> Vec<Vec<f64>> {
            (0..STATES).map(|s| team.actors[k].discrete_log_probs(&one_hot(s, STATES)).unwrap().iter().map(|l| l.exp()).collect()).collect()
        };
        let before = [table(&team, 0), table(&team, 1)];
        let report = team.update(&buf, &mut r).unwrap();
        let first = report.order[0];
        let after = table(&team, first);
        for (i, &s) in states.iter().enumerate() {
            let PolicyAction::Discrete(a) = &buf.actions(first)[i] else { unreachable!() };
            let expected = after[s][a[0]] / before[first][s][a[0]] * buf.advantages()[i];
            worst = worst.max((report.factors[1][i] - expected).abs());
        }
    }
    (worst <= 1e-10, format!("100 instances, max abs error {worst:.1e}"))
}

/// Largest relative gap between analytic and central-difference gradients.
fn fd_error(params: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    const H: f64 = 1e-6;
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + H;
        let up = loss(&p);
        p[i] = orig - H;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-3));
    }
    worst
}

fn test_actor(r: &mut ChaCha8Rng, gaussian: bool) -> Actor {
    let head = if gaussian {
        PolicyHead::Gaussian(GaussianHead::new(&[-1.0, 0.0, -2.0], &[1.0, 1.0, 2.0]).unwrap())
    } else {
        PolicyHead::Discrete(MultiDiscreteHead::new(&[3, 2, 4]).unwrap())
    };
    let mut a = Actor::new(5, &[7, 6], head, r).unwrap();
    a.params.iter_mut().for_each(|p| *p += 0.3 * r.sample::<f64, _>(StandardNormal));
    a
}

fn gradient_check() -> Verdict {
    let mut worst = [0.0f64; 5];
    for seed in 0..20 {
        let mut r = rng(1000 + seed);
        // critic / twin-Q regression loss
        let mlp = Mlp::new(&[4, 8, 1]).unwrap();
        let params: Vec<f64> = (0..mlp.num_params()).map(|_| r.sample(StandardNormal)).collect();
        let x = normal_matrix(&mut r, 6, 4);
        let targets: Vec<f64> = (0..6).map(|_| r.sample(StandardNormal)).collect();
        let (_, g) = mse_loss(&mlp, &params, &x, &targets).unwrap();
        worst[0] = worst[0].max(fd_error(&params, &g, |p| mse_loss(&mlp, p, &x, &targets).unwrap().0));

        // clipped surrogate with entropy bonus, both heads
        for (slot, gaussian) in [(1, false), (2, true)] {
            let mut actor = test_actor(&mut r, gaussian);
            let obs = normal_matrix(&mut r, 6, 5);
            let actions: Vec<PolicyAction> = (0..6).map(|b| actor.sample(obs.row(b), &mut r).unwrap()).collect();
            let eval = actor.evaluate(&obs, &actions).unwrap();
            let old: Vec<f64> = eval.log_prob.iter().map(|lp| lp + r.gen_range(-0.4..0.4)).collect();
            let factor: Vec<f64> = (0..6).map(|_| r.sample(StandardNormal)).collect();
            let batch = ActorBatch { obs: obs.clone(), actions: &actions, old_log_prob: &old, factor: &factor };
            let out = actor_loss(&actor, &batch, 0.2, 0.05).unwrap();
            let params = actor.params.clone();
            worst[slot] = worst[slot].max(fd_error(&params, &out.grads, |p| {
                actor.params.copy_from_slice(p);
                actor_loss(&actor, &batch, 0.2, 0.05).unwrap().loss
            }));
        }

        // soft actor objective, discrete
        let mut actor = test_actor(&mut r, false);
        let obs = normal_matrix(&mut r, 4, 5);
        let q: Vec<Vec<f64>> = (0..4).map(|_| (0..24).map(|_| r.sample(StandardNormal)).collect()).collect();
        let alpha = r.gen_range(0.01..1.0);
        let out = discrete_actor_objective(&actor, &obs, &q, alpha).unwrap();
        let params = actor.params.clone();
        worst[3] = worst[3].max(fd_error(&params, &out.grads, |p| {
            actor.params.copy_from_slice(p);
            discrete_actor_objective(&actor, &obs, &q, alpha).unwrap().loss
        }));

        // soft actor objective, reparameterized Gaussian through the twin critics
        let mut actor = test_actor(&mut r, true);
        let critics = SoftCritics::new(8, &[6], &mut r).unwrap();
        let obs = normal_matrix(&mut r, 4, 5);
        let noise: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| r.sample(StandardNormal)).collect()).collect();
        let critic = |acts: &Matrix| {
            let mut x = Matrix::zeros(acts.rows, 8);
            for b in 0..acts.rows {
                x.row_mut(b)[..5].copy_from_slice(obs.row(b));
                x.row_mut(b)[5..].copy_from_slice(acts.row(b));
            }
            let (q, g) = critics.q_min_with_input_grad(&x)?;
            let mut dq = Matrix::zeros(acts.rows, 3);
            for b in 0..acts.rows {
                dq.row_mut(b).copy_from_slice(&g.row(b)[5..]);
            }
            Ok((q, dq))
        };
        let out = gaussian_actor_objective(&actor, &obs, &noise, alpha, critic).unwrap();
        let params = actor.params.clone();
        worst[4] = worst[4].max(fd_error(&params, &out.grads, |p| {
            actor.params.copy_from_slice(p);
            gaussian_actor_objective(&actor, &obs, &noise, alpha, critic).unwrap().loss
        }));
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    (max <= 1e-5, format!("5 losses x 20 networks, max rel error {max:.1e}"))
}

fn pn_guidance() -> Verdict {
    let shooter = AircraftState::new(Vec3::new(0.0, 0.0, 6000.0), 0.0, 0.0, 600.0);
    let target = AircraftState::new(Vec3::new(3000.0, 0.0, 6000.0), FRAC_PI_2, 0.0, 200.0);
    let m = launch_missile(&shooter, 0, 1).unwrap();
    let cfg = MissileConfig::default();
    let hit = simulate_engagement(&m, &target, &cfg, 1.0 / 60.0).unwrap();
    // without a fuse the closest approach measures pure guidance and integration accuracy
    let no_fuse = MissileConfig { explosive_radius: 1e-6, ..cfg };
    let misses: Vec<f64> =
        [10.0, 60.0, 240.0].iter().map(|hz| simulate_engagement(&m, &target, &no_fuse, 1.0 / hz).unwrap().miss_distance).collect();
    let ok = hit.status == MissileStatus::Hit
        && hit.miss_distance <= cfg.explosive_radius
        && misses.windows(2).all(|w| w[1] < w[0]);
    (ok, format!("{:?} at {:.1} m; unfused miss {:.3?} m", hit.status, hit.miss_distance, misses))
}

fn soft_value_and_replay() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(2000 + seed);
        let sizes = [vec![2, 3], vec![3]];
        let heads: Vec<PolicyHead> = sizes.iter().map(|s| PolicyHead::Discrete(MultiDiscreteHead::new(s).unwrap())).collect();
        let layout = JointLayout::new(2, heads.clone());
        let actors: Vec<Actor> = heads.into_iter().map(|h| Actor::new(2, &[4], h, &mut r).unwrap()).collect();
        let mut critics = SoftCritics::new(layout.input_len(), &[5], &mut r).unwrap();
        for t in critics.target.iter_mut() {
            t.iter_mut().for_each(|p| *p += 0.5 * r.sample::<f64, _>(StandardNormal));
        }
        let next_obs: Vec<Vec<f64>> = (0..2).map(|_| (0..2).map(|_| r.sample(StandardNormal)).collect()).collect();
        let sampled = [vec![r.gen_range(0..2), r.gen_range(0..3)], vec![r.gen_range(0..3)]];
        let actions: Vec<PolicyAction> = sampled.iter().cloned().map(PolicyAction::Discrete).collect();
        let alpha = r.gen_range(0.0..1.0);
        let v = soft_value(&layout, &critics, &actors, &next_obs, &actions, alpha).unwrap();

        // explicit loops: each agent's joint enumerated with the others at their sampled actions
        let q_min = |joint: &[Vec<usize>]| {
            let mut row = next_obs.concat();
            for (g, a) in sizes.iter().zip(joint) {
                for (&k, &j) in g.iter().zip(a) {
                    row.extend(one_hot(j, k));
                }
            }
            let x = Matrix::new(1, row.len(), row).unwrap();
            let q = |p: &[f64]| critics.net().predict(p, &x).unwrap().data[0];
            q(&critics.target[0]).min(q(&critics.target[1]))
        };
        let mut expected = 0.0;
        let mut entropy = 0.0;
        for m in 0..2 {
            let logits = actors[m].output(&next_obs[m]).unwrap();
            let mut probs = Vec::new();
            let mut start = 0;
            for &k in &sizes[m] {
                let p = softmax(&logits[start..start + k]);
                entropy -= p.iter().map(|q| q * q.ln()).sum::<f64>();
                probs.push(p);
                start += k;
            }
            let total: usize = sizes[m].iter().product();
            for flat in 0..total {
                let mut rest = flat;
                let idx: Vec<usize> = sizes[m].iter().rev().map(|&k| { let j = rest % k; rest /= k; j }).collect::<Vec<_>>().into_iter().rev().collect();
                let pi: f64 = idx.iter().zip(&probs).map(|(&j, p)| p[j]).product();
                let mut joint = sampled.to_vec();
                joint[m] = idx;
                expected += pi * q_min(&joint);
            }
        }
        worst = worst.max((v - (expected / 2.0 + alpha * entropy)).abs());
    }

    let mut fifo = ReplayBuffer::new(3);
    (0..5).for_each(|i| fifo.push(i));
    let fifo_ok = fifo.iter().copied().collect::<Vec<_>>() == vec![2, 3, 4];

    let mut b = ReplayBuffer::new(10);
    (0..10).for_each(|i| b.push(i));
    let mut r = rng(5);
    let mut counts = [0f64; 10];
    for _ in 0..10_000 {
        for i in b.sample_indices(10, &mut r).unwrap() {
            counts[*b.get(i).unwrap()] += 1.0;
        }
    }
    let chi2: f64 = counts.iter().map(|c| (c - 10_000.0).powi(2) / 10_000.0).sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    (worst <= 1e-10 && fifo_ok && p > 0.01, format!("enumeration error {worst:.1e}, FIFO {fifo_ok}, chi2 p = {p:.3}"))
}

fn learning_smoke() -> Verdict {
    const BUDGET: u64 = 200_000;
    const INTERVAL: u64 = 20_000;
    const EPISODES: usize = 8;
    let dir = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    let mut passed = 0;
    for seed in [1u64, 2, 3] {
        let mut cfg = RunConfig::new(TaskKind::SingleControlHeading, ProtocolKind::HierarchySelfplay, Algorithm::Happo);
        cfg.seeds = vec![seed];
        cfg.total_timesteps = BUDGET;
        cfg.eval_interval = 0;
        cfg.out_dir = dir.path().to_path_buf();
        let mut trainer = Trainer::new(&cfg, seed).unwrap();
        let eval_seed = trainer.eval_seed(0);
        let random = evaluate(&[Pilot::Uniform(policy_head(&cfg))], &cfg, EPISODES, eval_seed).unwrap().average;
        let path = dir.path().join(format!("smoke{seed}.csv"));
        let mut metrics = MetricsWriter::create(&path, trainer.schema().clone()).unwrap();
        let mut reached = None;
        let mut last = f64::NAN;
        let mut until = INTERVAL;
        while until <= BUDGET {
            trainer.advance(until, &mut metrics, None).unwrap();
            last = trainer.evaluate(EPISODES, eval_seed).unwrap().average;
            // rewards are penalties: twice as good as random means half the magnitude
            let target = if random < 0.0 { random / 2.0 } else { 2.0 * random };
            if last >= target {
                reached = Some(trainer.timestep());
                break;
            }
            until += INTERVAL;
        }
        passed += usize::from(reached.is_some());
        details.push(match reached {
            Some(t) => format!("seed {seed}: {last:.1} vs random {random:.1} at {t}"),
            None => format!("seed {seed}: {last:.1} vs random {random:.1}, not reached"),
        });
    }
    (passed == 3, details.join("; "))
}

fn determinism() -> Verdict {
    let mut same = true;
    let mut compared = 0;
    for algorithm in [Algorithm::Happo, Algorithm::Hasac] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg_a = small_config(TaskKind::NoWeapon2v2, ProtocolKind::HierarchySelfplay, algorithm, a.path());
        let cfg_b = small_config(TaskKind::NoWeapon2v2, ProtocolKind::HierarchySelfplay, algorithm, b.path());
        run_training(&cfg_a).unwrap();
        run_training(&cfg_b).unwrap();
        let (ra, rb) = (run_dir(&cfg_a, 7), run_dir(&cfg_b, 7));
        let mut names: Vec<String> =
            std::fs::read_dir(&ra).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.retain(|n| n != CONFIG_FILE);
        for n in names {
            same &= std::fs::read(ra.join(&n)).unwrap() == std::fs::read(rb.join(&n)).unwrap();
            compared += 1;
        }
    }
    (same, format!("{compared} artifacts compared byte for byte"))
}

/// Standard deviation of first differences of a 3-point moving average.
fn roughness(curve: &[f64]) -> f64 {
    let smooth: Vec<f64> = curve.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    let diffs: Vec<f64> = smooth.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.len() < 2 {
        return f64::NAN;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt()
}

fn variance_diagnostic() -> Verdict {
    const STEPS: u64 = 15_000;
    let dir = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    for algorithm in [Algorithm::Happo, Algorithm::Hasac] {
        let mut cfg = RunConfig::new(TaskKind::NoWeapon1v1, ProtocolKind::HierarchySelfplay, algorithm);
        cfg.seeds = vec![1, 2];
        cfg.total_timesteps = STEPS;
        cfg.eval_interval = STEPS / 10;
        cfg.eval_episodes = 4;
        cfg.out_dir = dir.path().to_path_buf();
        cfg.hasac.hidden = vec![16, 16];
        cfg.hasac.batch_size = 32;
        cfg.hasac.warmup_steps = 1_000;
        cfg.hasac.updates_per_step = 0.05;
        let mut rough = Vec::new();
        for &seed in &cfg.seeds {
            train_seed(&cfg, seed, None, false).unwrap();
            let (header, rows) = read_metrics(&run_dir(&cfg, seed).join(METRICS_FILE)).unwrap();
            let col = header.iter().position(|h| h == "eval_average_episode_rewards").unwrap() - 1;
            let curve: Vec<f64> = rows.iter().map(|r| r.values[col]).filter(|v| !v.is_nan()).collect();
            rough.push(roughness(&curve));
        }
        parts.push(format!("{algorithm}: {:.2}", rough.iter().sum::<f64>() / rough.len() as f64));
    }
    (true, format!("std of smoothed first differences over {STEPS} steps, seeds 1-2: {} (reported only)", parts.join(", ")))
}

fn main() -> ExitCode {
    let checks: [(&str, bool, fn() -> Verdict); 10] = [
        ("1 event reward exactness", true, event_exactness),
        ("2 altitude reward range", true, altitude_range),
        ("3 clipped surrogate table", true, surrogate_table),
        ("4 sequential factor oracle", true, sequential_factor_oracle),
        ("5 finite-difference gradients", true, gradient_check),
        ("6 proportional navigation", true, pn_guidance),
        ("7 soft value and replay", true, soft_value_and_replay),
        ("8 learning smoke test", true, learning_smoke),
        ("9 end-to-end determinism", true, determinism),
        ("10 HASAC vs HAPPO smoothness", false, variance_diagnostic),
    ];
    // optional criterion numbers on the command line select a subset
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, gating, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| name.split(' ').next() == Some(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = check();
        let tag = match (ok, gating) {
            (true, true) => "PASS",
            (false, true) => "FAIL",
            (_, false) => "INFO",
        };
        println!("{tag} criterion {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
        failed += usize::from(gating && !ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
