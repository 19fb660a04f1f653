//! Acceptance runner. Prints one line per criterion and exits non-zero if a
//! criterion fails that is not listed in `KNOWN_RED`.
//!
//! Criterion 8 needs the MoCap sequences, converted to CSV, under the
//! directory named by `NRSFM_MOCAP_DIR`: `<dir>/<name>/W.csv` and
//! `<dir>/<name>/S_gt.csv` (plus an optional `mask.csv`) for `drink`,
//! `pickup`, `yoga` and `stretch`. Without it the criterion is skipped.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tpa_nrsfm::eval::{e3d, nuclear_norm_diag, smoothness_diag};
use tpa_nrsfm::geometry::{exp_so3, LieVec};
use tpa_nrsfm::io::{read_mask, read_measurements, read_shapes};
use tpa_nrsfm::pipeline::{reconstruct, PipelineConfig};
use tpa_nrsfm::proxy::build_weight_matrix;
use tpa_nrsfm::segment::segment_nearly_rigid;
use tpa_nrsfm::seqdata::{CoordinateTag, RearrangedShape};
use tpa_nrsfm::solver::{Block, SolverConfig, SolverState};
use tpa_nrsfm::synth::{
    disrupt_rotations, generate_sequence, inject_occlusion, sample_rotation_noise,
    OcclusionPattern, SynthOutput, SynthSpec,
};
use tpa_nrsfm::tpa::{align_gpa, align_tpa, tpa_gradient, tpa_loss, TpaOptions};
use tpa_nrsfm::{MeasurementMatrix, RotationSequence, ShapeSequence, VisibilityMask};

/// Criteria expected to fail; see the decisions log for the analysis.
const KNOWN_RED: &[u32] = &[3];

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Res<T> = std::result::Result<T, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn budget(outcome: Outcome, elapsed: Duration, limit: Option<Duration>) -> Outcome {
    match (outcome, limit) {
        (Outcome::Pass(m), Some(l)) if elapsed > l => Outcome::Fail(format!(
            "{m}; took {:.1} s, over the {:.0} s budget",
            elapsed.as_secs_f64(),
            l.as_secs_f64()
        )),
        (o, _) => o,
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_rots(rng: &mut ChaCha8Rng, f: usize) -> RotationSequence {
    RotationSequence::new(
        (0..f)
            .map(|_| {
                exp_so3(&LieVec::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                ))
            })
            .collect(),
    )
}

/// Solver state with every variable, multiplier and weight randomised.
fn random_state(rng: &mut ChaCha8Rng, f: usize, p: usize, masked: bool) -> Res<(SolverState, SolverConfig)> {
    let cfg = SolverConfig {
        mu1: rng.random_range(0.5..2.0),
        mu2: rng.random_range(0.05..0.5),
        mu3: rng.random_range(0.05..0.5),
        ..SolverConfig::default()
    };
    let w = MeasurementMatrix::new(rand_mat(rng, 2 * f, p)).map_err(err)?;
    let mask = if masked {
        let mut o = DMatrix::from_fn(f, p, |_, _| rng.random_bool(0.7));
        for i in 0..f {
            o[(i, i % p)] = true;
        }
        Some(VisibilityMask::new(o).map_err(err)?)
    } else {
        None
    };
    let r_p = rand_rots(rng, f);
    let mut st = SolverState::new(&w, &r_p, &cfg, mask.as_ref()).map_err(err)?;
    st.s = ShapeSequence::camera(rand_mat(rng, 3 * f, p)).map_err(err)?;
    st.s_tilde = ShapeSequence::camera(rand_mat(rng, 3 * f, p)).map_err(err)?;
    st.s_hat = ShapeSequence::camera(rand_mat(rng, 3 * f, p)).map_err(err)?;
    st.s_breve_sharp = RearrangedShape {
        s_sharp: rand_mat(rng, f, 3 * p),
    };
    st.q = rand_rots(rng, f);
    st.y1 = rand_mat(rng, f, 3 * p);
    st.y2 = rand_mat(rng, 3 * f, p);
    st.y3 = rand_mat(rng, 3 * f, p);
    st.beta = rng.random_range(0.1..3.0);
    let seg = segment_nearly_rigid(&st.s_hat, 0.5, 2, true).map_err(err)?;
    st.set_weight_matrix(build_weight_matrix(&seg, &cfg.proxy()).map_err(err)?)
        .map_err(err)?;
    Ok((st, cfg))
}

fn rel_err(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-8)
}

/// Central differences along `exp(h e_k) Q_i`.
fn fd_gradient<F: Fn(&RotationSequence) -> f64>(q: &RotationSequence, i: usize, f: F) -> Vector3<f64> {
    let h = 1e-6;
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = h;
        let mut qp = q.clone();
        qp.rots[i] = exp_so3(&LieVec(e)).compose(&q.rots[i]);
        let mut qm = q.clone();
        qm.rots[i] = exp_so3(&LieVec(-e)).compose(&q.rots[i]);
        g[k] = (f(&qp) - f(&qm)) / (2.0 * h);
    }
    g
}

fn criterion_1() -> Res<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_tpa, mut worst_admm) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let f = rng.random_range(2..=6);
        let p = rng.random_range(3..=10);
        let s = ShapeSequence::camera(rand_mat(&mut rng, 3 * f, p)).map_err(err)?;
        let q = rand_rots(&mut rng, f);
        let i = rng.random_range(0..f);
        let g = tpa_gradient(&q, &s, i).map_err(err)?.0;
        let fd = fd_gradient(&q, i, |q| tpa_loss(q, &s).unwrap());
        worst_tpa = worst_tpa.max(rel_err(&g, &fd));

        let (st, cfg) = random_state(&mut rng, f, p, false)?;
        let i = rng.random_range(0..f);
        let g = st.q_gradient(&cfg, i).map_err(err)?.0;
        let fd = fd_gradient(&st.q, i, |q| {
            let mut other = st.clone();
            other.q = q.clone();
            other.subproblem_objective(&cfg, Block::Q).unwrap()
        });
        worst_admm = worst_admm.max(rel_err(&g, &fd));
    }
    let msg = format!("worst relative error: TPA {worst_tpa:.2e}, ADMM Q {worst_admm:.2e} (100 instances)");
    Ok(if worst_tpa <= 1e-5 && worst_admm <= 1e-5 {
        Outcome::Pass(msg)
    } else {
        Outcome::Fail(msg)
    })
}

/// Objective at the current value of `block` minus the smallest value over 50
/// random perturbations of size 1e-3; non-positive means the update won.
fn optimality_gap(st: &SolverState, cfg: &SolverConfig, block: Block, rng: &mut ChaCha8Rng) -> Res<f64> {
    let best = st.subproblem_objective(cfg, block).map_err(err)?;
    let mut gap = f64::NEG_INFINITY;
    for _ in 0..50 {
        let mut other = st.clone();
        let target = match block {
            Block::ProxySharp => &mut other.s_breve_sharp.s_sharp,
            Block::SHat => &mut other.s_hat.s,
            Block::STilde => &mut other.s_tilde.s,
            Block::S => &mut other.s.s,
            Block::Q => unreachable!(),
        };
        let d = rand_mat(rng, target.nrows(), target.ncols()) * 1e-3;
        *target += d;
        let v = other.subproblem_objective(cfg, block).map_err(err)?;
        gap = gap.max((best - v) / v.abs().max(1.0));
    }
    Ok(gap)
}

fn criterion_2() -> Res<Outcome> {
    let mut worst: Vec<(&str, f64)> = vec![
        ("proxy", f64::NEG_INFINITY),
        ("S^", f64::NEG_INFINITY),
        ("S~", f64::NEG_INFINITY),
        ("S", f64::NEG_INFINITY),
        ("occluded S", f64::NEG_INFINITY),
    ];
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        for masked in [false, true] {
            let (mut st, cfg) = random_state(&mut rng, 5, 8, masked)?;
            let steps: [(usize, Block); 4] = [
                (0, Block::ProxySharp),
                (1, Block::SHat),
                (2, Block::STilde),
                (if masked { 4 } else { 3 }, Block::S),
            ];
            for (slot, block) in steps {
                match block {
                    Block::ProxySharp => st.update_proxy_sharp(&cfg),
                    Block::SHat => st.update_s_hat(&cfg),
                    Block::STilde => st.update_s_tilde(&cfg),
                    Block::S => st.update_s(&cfg),
                    Block::Q => unreachable!(),
                }
                .map_err(err)?;
                let gap = optimality_gap(&st, &cfg, block, &mut rng)?;
                worst[slot].1 = worst[slot].1.max(gap);
            }
        }
    }
    let ok = worst.iter().all(|(_, g)| *g <= 1e-12);
    let msg = format!(
        "largest relative excess over perturbations: {}",
        worst
            .iter()
            .map(|(n, g)| format!("{n} {g:.1e}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(if ok { Outcome::Pass(msg) } else { Outcome::Fail(msg) })
}

fn criterion_3() -> Res<Outcome> {
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in 0..10 {
        let out = generate_sequence(&SynthSpec {
            seed,
            deform_scale: 0.7,
            coeff_band: 2,
            ..SynthSpec::default()
        })
        .map_err(err)?;
        let gt = &out.shapes_world;
        let (disrupted, _) = disrupt_rotations(gt, 0.1, seed).map_err(err)?;
        let tpa = align_tpa(&disrupted, &TpaOptions::default()).map_err(err)?;
        let gpa_rots = align_gpa(&disrupted, 100).map_err(err)?.rotations;
        let gpa = disrupted.centered().rotated(&gpa_rots).map_err(err)?;
        let n_gt = nuclear_norm_diag(gt).map_err(err)?;
        let n_dis = nuclear_norm_diag(&disrupted).map_err(err)?;
        let n_tpa = nuclear_norm_diag(&tpa.aligned).map_err(err)?;
        let n_gpa = nuclear_norm_diag(&gpa).map_err(err)?;
        let smooth_ok = smoothness_diag(&tpa.aligned) < smoothness_diag(&disrupted);
        let ok = n_tpa <= 1.05 * n_gt && n_tpa < n_dis && n_tpa < n_gpa && smooth_ok;
        if ok {
            passed += 1;
        } else {
            notes.push(format!(
                "seed {seed}: TPA/GT {:.4}, TPA<GPA {}, TPA<disrupted {}, smoother {}",
                n_tpa / n_gt,
                n_tpa < n_gpa,
                n_tpa < n_dis,
                smooth_ok
            ));
        }
    }
    let msg = format!("{passed}/10 seeds{}{}", if notes.is_empty() { "" } else { "; " }, notes.join("; "));
    Ok(if passed == 10 { Outcome::Pass(msg) } else { Outcome::Fail(msg) })
}

/// F=50, P=30, K=3, one-circle, noise-free, with slow two-atom coefficients.
fn smooth_instance(seed: u64) -> Res<SynthOutput> {
    generate_sequence(&SynthSpec {
        seed,
        deform_scale: 0.1,
        coeff_band: 2,
        ..SynthSpec::default()
    })
    .map_err(err)
}

fn criterion_4() -> Res<Outcome> {
    let mut passed = 0;
    let mut errs = Vec::new();
    for seed in 0..10 {
        let out = smooth_instance(seed)?;
        let r = reconstruct(&out.w, None, None, &PipelineConfig::default()).map_err(err)?;
        let e = e3d(&r.s, &out.shapes).map_err(err)?.e3d;
        let reproj = r.solve.diagnostics.last().map(|d| d.reprojection_error).unwrap_or(f64::NAN);
        if e <= 0.05 && reproj <= 1e-3 {
            passed += 1;
        }
        errs.push(format!("{e:.4}/{reproj:.1e}"));
    }
    let msg = format!("{passed}/10 seeds (e3d/reprojection: {})", errs.join(" "));
    Ok(if passed >= 8 { Outcome::Pass(msg) } else { Outcome::Fail(msg) })
}

fn criterion_5() -> Res<Outcome> {
    let mut passed = 0;
    let mut errs = Vec::new();
    for seed in 0..10 {
        let out = smooth_instance(seed)?;
        let noise = sample_rotation_noise(out.rotations.len(), 0.1, seed + 100);
        let cams = noise.compose(&out.rotations).map_err(err)?;
        let full_cfg = PipelineConfig::default();
        let mut frozen_cfg = full_cfg;
        frozen_cfg.solver.freeze_q = true;
        let full = reconstruct(&out.w, None, Some(&cams), &full_cfg).map_err(err)?;
        let frozen = reconstruct(&out.w, None, Some(&cams), &frozen_cfg).map_err(err)?;
        let a = e3d(&full.s, &out.shapes).map_err(err)?.e3d;
        let b = e3d(&frozen.s, &out.shapes).map_err(err)?.e3d;
        if a < b {
            passed += 1;
        }
        errs.push(format!("{a:.3}<{b:.3}"));
    }
    let msg = format!("{passed}/10 seeds (full vs frozen Q: {})", errs.join(" "));
    Ok(if passed >= 8 { Outcome::Pass(msg) } else { Outcome::Fail(msg) })
}

/// Half the points static, half on a 10-cycle sinusoid along a random
/// direction, around a random base shape.
fn two_group(seed: u64, f: usize, p: usize) -> Res<ShapeSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rand_mat(&mut rng, 3, p);
    let dirs: Vec<(Vector3<f64>, f64)> = (0..p)
        .map(|_| {
            let d = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            (d.normalize() * rng.random_range(0.1..0.5), rng.random_range(0.0..6.28))
        })
        .collect();
    let mut s = DMatrix::zeros(3 * f, p);
    for i in 0..f {
        for j in 0..p {
            let (d, phase) = dirs[j];
            let w = if j >= p / 2 {
                (2.0 * std::f64::consts::PI * 10.0 * i as f64 / f as f64 + phase).sin()
            } else {
                0.0
            };
            for r in 0..3 {
                s[(3 * i + r, j)] = base[(r, j)] + w * d[r];
            }
        }
    }
    ShapeSequence::new(s, CoordinateTag::Canonical).map_err(err)
}

fn criterion_6() -> Res<Outcome> {
    let (f, p) = (50, 30);
    let expected: Vec<usize> = (0..p / 2).collect();
    let mut passed = 0;
    for seed in 0..10 {
        let s = two_group(seed, f, p)?;
        let seg = segment_nearly_rigid(&s, 0.5, 2, true).map_err(err)?;
        if seg.rigid_set == expected {
            passed += 1;
        }
    }
    let msg = format!("{passed}/10 seeds recover the static half exactly");
    Ok(if passed == 10 { Outcome::Pass(msg) } else { Outcome::Fail(msg) })
}

fn criterion_7() -> Res<Outcome> {
    let mut passed = 0;
    let mut errs = Vec::new();
    for seed in 0..10 {
        let out = smooth_instance(seed)?;
        let mask = inject_occlusion(
            out.w.frames(),
            out.w.points(),
            0.3,
            OcclusionPattern::UniformRandom,
            seed + 1,
        )
        .map_err(err)?;
        let cfg = PipelineConfig::default();
        let plain = reconstruct(&out.w, None, None, &cfg).map_err(err)?;
        let masked = reconstruct(&out.w, Some(&mask), None, &cfg).map_err(err)?;
        let a = e3d(&plain.s, &out.shapes).map_err(err)?.e3d;
        let b = e3d(&masked.s, &out.shapes).map_err(err)?.e3d;
        if b <= 1.5 * a {
            passed += 1;
        }
        errs.push(format!("{b:.4}/{a:.4}"));
    }
    let msg = format!("{passed}/10 seeds (masked/unmasked e3d: {})", errs.join(" "));
    Ok(if passed >= 8 { Outcome::Pass(msg) } else { Outcome::Fail(msg) })
}

const MOCAP: &[(&str, usize, f64)] = &[
    ("drink", 13, 0.0031),
    ("pickup", 12, 0.0126),
    ("yoga", 10, 0.0109),
    ("stretch", 12, 0.0114),
];

fn run_mocap(dir: &Path, name: &str, k_s: usize) -> Res<f64> {
    let seq = dir.join(name);
    let w = read_measurements(&seq.join("W.csv")).map_err(err)?;
    let gt = read_shapes(&seq.join("S_gt.csv"), CoordinateTag::Camera).map_err(err)?;
    let mask_path = seq.join("mask.csv");
    let mask = if mask_path.exists() {
        Some(read_mask(&mask_path).map_err(err)?)
    } else {
        None
    };
    let mut cfg = PipelineConfig::default();
    cfg.solver.k_s = Some(k_s);
    let r = reconstruct(&w, mask.as_ref(), None, &cfg).map_err(err)?;
    Ok(e3d(&r.s, &gt).map_err(err)?.e3d)
}

fn criterion_8() -> Res<Outcome> {
    let Some(dir) = std::env::var_os("NRSFM_MOCAP_DIR").map(PathBuf::from) else {
        return Ok(Outcome::Skip("NRSFM_MOCAP_DIR not set; MoCap sequences not available".into()));
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, k_s, reported) in MOCAP {
        let e = run_mocap(&dir, name, *k_s)?;
        ok &= e <= 2.5 * reported;
        notes.push(format!("{name} {e:.4} (reported {reported})"));
    }
    let msg = notes.join(", ");
    Ok(if ok { Outcome::Pass(msg) } else { Outcome::Fail(msg) })
}

fn criterion_9() -> Res<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();
    let mut record = |name: &str, r: common::Check| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    for n in 0..200u64 {
        let phi = Vector3::new(
            rng.random_range(-3.1..3.1),
            rng.random_range(-3.1..3.1),
            rng.random_range(-3.1..3.1),
        );
        record("exp/log", common::exp_log(phi));
        record("rearrange", common::rearrange_round_trip(n, 1 + n as usize % 11, 1 + n as usize % 7));
        record("translation", common::translation_projector(1 + n as usize % 40));
        let alpha_r = if n % 5 == 0 { 1.0 } else { rng.random_range(0.05..1.0) };
        record(
            "weight matrix",
            common::weight_matrix_rank(n, 2 + n as usize % 23, alpha_r, rng.random_range(0.0..0.9)),
        );
    }
    for n in 0..40u64 {
        record("tpa so3", common::tpa_outputs_in_so3(n));
        record("basis rank", common::basis_rank(n, 15, 9, [1, 2, 3, 5][n as usize % 4]));
    }
    for n in 0..3u64 {
        record("determinism", common::determinism(n));
    }
    Ok(if failures.is_empty() {
        Outcome::Pass("SO(3), rearrangement, weight-matrix rank, projector and determinism checks".into())
    } else {
        Outcome::Fail(failures.join("; "))
    })
}

fn main() {
    let criteria: [(u32, fn() -> Res<Outcome>, Option<u64>); 9] = [
        (1, criterion_1, Some(10)),
        (2, criterion_2, Some(30)),
        (3, criterion_3, Some(60)),
        (4, criterion_4, Some(120)),
        (5, criterion_5, None),
        (6, criterion_6, Some(5)),
        (7, criterion_7, None),
        (8, criterion_8, None),
        (9, criterion_9, Some(30)),
    ];
    let mut unexpected = Vec::new();
    for (n, run, limit) in criteria {
        let start = Instant::now();
        let outcome = run().map_or_else(|e| Outcome::Fail(format!("error: {e}")), |o| o);
        let outcome = budget(outcome, start.elapsed(), limit.map(Duration::from_secs));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(m) => println!("criterion {n}: PASS ({secs:.1} s) {m}"),
            Outcome::Skip(m) => println!("criterion {n}: SKIP {m}"),
            Outcome::Fail(m) => {
                let known = KNOWN_RED.contains(&n);
                let tag = if known { " [known red]" } else { "" };
                println!("criterion {n}: FAIL{tag} ({secs:.1} s) {m}");
                if !known {
                    unexpected.push(n);
                }
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
