use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::json;

use tpa_nrsfm::eval::{e3d, nuclear_norm_diag, smoothness_diag};
use tpa_nrsfm::init::complete_matrix;
use tpa_nrsfm::io::{
    read_mask, read_measurements, read_rotations, read_shapes, write_mask, write_measurements,
    write_rotations, write_shapes,
};
use tpa_nrsfm::pipeline::reconstruct as run_pipeline;
use tpa_nrsfm::segment::segment_nearly_rigid;
use tpa_nrsfm::solver::write_diagnostics_csv;
use tpa_nrsfm::synth::{generate_sequence, SynthSpec};
use tpa_nrsfm::tpa::{align_gpa, align_tpa, TpaOptions};
use tpa_nrsfm::CoordinateTag;

use crate::config::{load, write_json, InitMode, RunConfig};
use crate::{
    AlignArgs, AlignMethod, CompleteArgs, DiagArgs, EvalArgs, ReconstructArgs, SegmentArgs,
    Status, SynthArgs,
};

fn status(converged: bool) -> Status {
    if converged {
        Status::Converged
    } else {
        Status::HitCap
    }
}

fn existing(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("{what} file {} does not exist", path.display());
    }
    Ok(())
}

/// `run.json` goes next to the given output file.
fn run_json_beside(output: &Path) -> PathBuf {
    match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join("run.json"),
        _ => PathBuf::from("run.json"),
    }
}

pub fn synth(a: &SynthArgs, seed: Option<u64>) -> anyhow::Result<Status> {
    let mut spec: SynthSpec = load(a.config.as_deref())?;
    if let Some(v) = a.frames {
        spec.frames = v;
    }
    if let Some(v) = a.points {
        spec.points = v;
    }
    if let Some(v) = a.basis {
        spec.basis = v;
    }
    if let Some(v) = &a.camera_type {
        spec.camera_type = v.parse()?;
    }
    if let Some(v) = a.coeff_band {
        spec.coeff_band = v;
    }
    if let Some(v) = a.deform_scale {
        spec.deform_scale = v;
    }
    if let Some(v) = a.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = a.occlusion_rate {
        spec.occlusion_rate = v;
    }
    if let Some(v) = &a.occlusion_pattern {
        spec.occlusion_pattern = v.parse()?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let out = generate_sequence(&spec)?;
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))?;
    write_measurements(&a.out.join("W.csv"), &out.w)?;
    write_shapes(&a.out.join("S_gt.csv"), &out.shapes)?;
    write_shapes(&a.out.join("S_gt_world.csv"), &out.shapes_world)?;
    write_rotations(&a.out.join("R_gt.csv"), &out.rotations)?;
    if let Some(m) = &out.mask {
        write_mask(&a.out.join("mask.csv"), m)?;
    }
    write_json(&a.out.join("spec.json"), &spec)?;
    write_json(&a.out.join("run.json"), &json!({ "command": "synth", "spec": spec }))?;
    Ok(Status::Converged)
}

fn resolve_run_config(a: &ReconstructArgs, seed: Option<u64>, threads: usize) -> anyhow::Result<RunConfig> {
    let mut cfg: RunConfig = load(a.config.as_deref())?;
    let s = &mut cfg.pipeline.solver;
    macro_rules! set {
        ($($flag:ident => $dst:expr),* $(,)?) => {
            $(if let Some(v) = a.$flag.clone() { $dst = v.into(); })*
        };
    }
    set!(mu1 => s.mu1, mu2 => s.mu2, mu3 => s.mu3, alpha_r => s.alpha_r, delta_r => s.delta_r,
         beta_d => s.beta_d, eps => s.eps, max_iters_phase1 => s.max_iters_phase1,
         max_iters_phase2 => s.max_iters_phase2);
    if let Some(k) = a.k_s {
        s.k_s = Some(k);
    }
    if a.freeze_q {
        s.freeze_q = true;
    }
    if a.no_complete {
        cfg.pipeline.complete = false;
    }
    if let Some(r) = a.completion_rank {
        cfg.pipeline.completion_rank = Some(r);
    }
    if let Some(k) = a.init_basis {
        cfg.pipeline.init_basis = k;
    }
    set!(input => cfg.input, mask => cfg.mask, cameras => cfg.cameras, out => cfg.out,
         rotations => cfg.rotations, canonical => cfg.canonical, diagnostics => cfg.diagnostics);
    if let Some(m) = a.init {
        cfg.init = m;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    cfg.threads = threads;
    cfg.pipeline.validate()?;
    Ok(cfg)
}

pub fn reconstruct(a: &ReconstructArgs, seed: Option<u64>, threads: usize) -> anyhow::Result<Status> {
    let cfg = resolve_run_config(a, seed, threads)?;
    let input = cfg.input.as_deref().context("no input tracks given (--input)")?;
    existing(input, "input")?;
    let w = read_measurements(input)?;
    let mask = match &cfg.mask {
        Some(p) => {
            existing(p, "mask")?;
            Some(read_mask(p)?)
        }
        None => None,
    };
    let cameras = match cfg.init {
        InitMode::File => {
            let p = cfg
                .cameras
                .as_deref()
                .context("--init file needs a rotation file (--cameras)")?;
            existing(p, "camera")?;
            Some(read_rotations(p)?)
        }
        InitMode::Bmm => None,
    };

    let r = run_pipeline(&w, mask.as_ref(), cameras.as_ref(), &cfg.pipeline)?;

    if let Some(p) = &cfg.out {
        write_shapes(p, &r.s)?;
    }
    if let Some(p) = &cfg.rotations {
        write_rotations(p, &r.q)?;
    }
    if let Some(p) = &cfg.canonical {
        write_shapes(p, &r.s_hat)?;
    }
    if let Some(p) = &cfg.diagnostics {
        let f = std::fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?;
        write_diagnostics_csv(&r.solve.diagnostics, std::io::BufWriter::new(f))?;
    }
    let anchor = [&cfg.out, &cfg.rotations, &cfg.canonical, &cfg.diagnostics]
        .into_iter()
        .flatten()
        .next()
        .cloned()
        .unwrap_or_else(|| PathBuf::from("run.json"));
    write_json(&run_json_beside(&anchor), &cfg)?;

    let last = r.solve.diagnostics.last();
    println!(
        "iterations {} + {}, reprojection error {}",
        r.solve.phase1_iterations,
        r.solve.phase2_iterations,
        last.map_or(f64::NAN, |d| d.reprojection_error)
    );
    let completion_ok = r.completion.as_ref().is_none_or(|c| c.converged);
    Ok(status(r.solve.converged && completion_ok))
}

pub fn align(a: &AlignArgs) -> anyhow::Result<Status> {
    existing(&a.input, "input")?;
    let s = read_shapes(&a.input, CoordinateTag::Camera)?;
    let (aligned, rots, converged) = match a.method {
        AlignMethod::Tpa => {
            let opts = TpaOptions {
                max_outer_iters: a.max_iters,
                ..TpaOptions::default()
            };
            let r = align_tpa(&s, &opts)?;
            (r.aligned, r.rotations, r.converged)
        }
        AlignMethod::Gpa => {
            let r = align_gpa(&s, a.max_iters)?;
            let aligned = s.centered().rotated(&r.rotations)?;
            (aligned, r.rotations, r.iterations < a.max_iters)
        }
    };
    write_shapes(&a.out, &aligned)?;
    if let Some(p) = &a.rotations {
        write_rotations(p, &rots)?;
    }
    let method = format!("{:?}", a.method).to_lowercase();
    write_json(
        &run_json_beside(&a.out),
        &json!({ "command": "align", "method": method, "max_iters": a.max_iters }),
    )?;
    Ok(status(converged))
}

pub fn segment(a: &SegmentArgs) -> anyhow::Result<Status> {
    existing(&a.input, "input")?;
    let s = read_shapes(&a.input, CoordinateTag::Canonical)?;
    let seg = segment_nearly_rigid(&s, a.alpha_r, a.m_f, !a.no_fold)?;
    match &a.out {
        Some(p) => {
            write_json(p, &seg)?;
            write_json(
                &run_json_beside(p),
                &json!({ "command": "segment", "alpha_r": a.alpha_r, "m_f": a.m_f, "fold": !a.no_fold }),
            )?;
        }
        None => println!("{}", serde_json::to_string_pretty(&seg)?),
    }
    Ok(Status::Converged)
}

pub fn complete(a: &CompleteArgs) -> anyhow::Result<Status> {
    existing(&a.input, "input")?;
    existing(&a.mask, "mask")?;
    let w = read_measurements(&a.input)?;
    let mask = read_mask(&a.mask)?;
    let c = complete_matrix(&w, &mask, a.rank)?;
    write_measurements(&a.out, &c.w)?;
    write_json(
        &run_json_beside(&a.out),
        &json!({ "command": "complete", "rank": a.rank, "iterations": c.iterations }),
    )?;
    Ok(status(c.converged))
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<Status> {
    existing(&a.est, "estimate")?;
    existing(&a.gt, "ground-truth")?;
    let est = read_shapes(&a.est, CoordinateTag::Camera)?;
    let gt = read_shapes(&a.gt, CoordinateTag::Camera)?;
    let report = e3d(&est, &gt)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("e3d {}", report.e3d);
        println!("flip_used {}", report.flip_used);
    }
    Ok(Status::Converged)
}

pub fn diag(a: &DiagArgs) -> anyhow::Result<Status> {
    existing(&a.input, "input")?;
    let s = read_shapes(&a.input, CoordinateTag::Canonical)?;
    println!("nuclear_norm {}", nuclear_norm_diag(&s)?);
    println!("smoothness {}", smoothness_diag(&s));
    Ok(Status::Converged)
}
