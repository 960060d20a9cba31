//! Acceptance suite. Prints one PASS/FAIL line per criterion, then one line per
//! statistical example, and exits non-zero if anything failed.
//!
//! HARDQUAD_ACCEPTANCE=quick runs the reduced scale.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use hardquad_core::harness::emit::{self, Format};
use hardquad_core::harness::verify::{self, CriterionResult, Scale};
use hardquad_core::harness::{run_trial, sweep, SweepOutput};
use hardquad_core::instances::{self, Instance, InstanceParams};
use hardquad_core::solvers::{self, SolverKind, SolverOptions};
use hardquad_core::{linalg, oracle, rng};

struct Tally {
    failed: Vec<String>,
    out: PathBuf,
}

impl Tally {
    fn criterion(&mut self, c: CriterionResult) {
        println!("{}", c.line());
        for l in c.supporting_lines() {
            println!("{l}");
        }
        if !c.passed {
            self.failed.push(format!("criterion {}", c.number));
        }
        let _ = std::io::stdout().flush();
    }

    fn example(&mut self, name: &str, ok: bool, detail: String) {
        println!("example {name} {} {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(format!("example {name}"));
        }
        let _ = std::io::stdout().flush();
    }

    fn sweep(&self, cfg: hardquad_core::harness::ExperimentConfig) -> SweepOutput {
        let t = Instant::now();
        let o = sweep(&cfg).expect("sweep");
        if !o.records.is_empty() {
            emit::emit(&self.out, &cfg.name, &o.records, &o.failures, Format::Csv).expect("emit");
        }
        eprintln!("sweep {}: {} records, {} failed trials, {:.0?}", cfg.name, o.records.len(), o.failures.len(), t.elapsed());
        o
    }
}

fn gd_contraction(scale: Scale) -> (bool, String) {
    let d = if scale == Scale::Full { 2000 } else { 300 };
    let inst = (0..50u64)
        .find_map(|s| Instance::sample(InstanceParams::new(d, 1.25, 0.0625, rng::derive(verify::DEFAULT_SEED, &[82, s]))).ok())
        .expect("instance");
    let eig = linalg::sym_eigenvalues(&inst.a).expect("eigenvalues");
    let (mu, l) = (eig[0], eig[d - 1]);
    let kappa = l / mu;
    let opts = SolverOptions { steps: 400, rtol: 0.0, step: Some(2.0 / (l + mu)), ..Default::default() };
    let out = solvers::solve_instance(SolverKind::Gd, &inst, 400, &opts).expect("gd");
    let h = &out.result.history;
    let (k0, k1) = (100, 400);
    let rate = (h[k1].rel_err / h[k0].rel_err).powf(1.0 / (k1 - k0) as f64);
    let want = (kappa - 1.0) / (kappa + 1.0);
    ((rate / want - 1.0).abs() <= 0.01, format!("kappa={kappa:.1} measured={rate:.5} predicted={want:.5}"))
}

fn random_queries_potential(scale: Scale) -> (bool, String) {
    let (d, k, reps) = if scale == Scale::Full { (1000, 100, 20) } else { (200, 20, 10) };
    let mut ratios = Vec::new();
    for rep in 0..reps {
        let inst = (0..50u64)
            .find_map(|s| Instance::sample(InstanceParams::new(d, 1.5, 0.25, rng::derive(11, &[rep, s]))).ok())
            .expect("instance");
        let mut session = oracle::open_session(&inst, k);
        let mut r = rng::from_seed(rng::derive(12, &[rep]));
        for _ in 0..k {
            session.query(&rng::gaussian_vec(&mut r, d, 1.0)).expect("query");
        }
        ratios.push(session.potential(&inst.u) / (k as f64 / d as f64 * linalg::norm_sq(&inst.u)));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ((mean - 1.0).abs() <= 0.1, format!("mean Phi_k / (k |u|^2 / d) = {mean:.4} over {reps} sessions"))
}

fn main() {
    let scale = match std::env::var("HARDQUAD_ACCEPTANCE").as_deref() {
        Ok("quick") => Scale::Quick,
        _ => Scale::Full,
    };
    let seed = verify::DEFAULT_SEED;
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{scale:?}").to_lowercase());
    let mut t = Tally { failed: Vec::new(), out: out.clone() };
    println!("acceptance suite, scale {scale:?}, master seed {seed}, output {}", out.display());

    t.criterion(verify::criterion_1(scale, seed).expect("criterion 1"));
    t.criterion(verify::criterion_2().expect("criterion 2"));
    let spectral = t.sweep(verify::spectral_config(scale, seed));
    t.criterion(verify::criterion_3(&spectral, scale));
    let overlap = t.sweep(verify::overlap_config(scale, seed));
    t.criterion(verify::criterion_4(&spectral, &overlap, scale));
    let potential = t.sweep(verify::potential_config(scale, seed));
    t.criterion(verify::criterion_5(&potential, scale).expect("criterion 5"));
    t.criterion(verify::criterion_6(scale, seed).expect("criterion 6"));
    let solver = t.sweep(verify::solver_config(scale, seed));
    t.criterion(verify::criterion_7(&solver, scale));
    t.criterion(verify::criterion_8().expect("criterion 8"));
    t.criterion(verify::criterion_9(scale, seed).expect("criterion 9"));
    t.criterion(verify::criterion_10(seed).expect("criterion 10"));

    let l = instances::lambda_for_kappa(1e6).expect("lambda");
    let ratio = (l - 1.0) / (2.0 / 1e6f64.sqrt());
    t.example("lambda_for_kappa_asymptote", (ratio - 1.0).abs() <= 0.1, format!("(lambda-1) / (2/sqrt(kappa)) = {ratio:.4} at kappa=1e6"));

    let (ok, detail) = gd_contraction(scale);
    t.example("gd_contraction_kappa_82", ok, detail);

    let (ok, detail) = random_queries_potential(scale);
    t.example("random_queries_potential", ok, detail);

    let cfg = verify::solver_config(scale, seed);
    let start = Instant::now();
    let rec = run_trial(&cfg, 0, 0);
    let secs = start.elapsed().as_secs_f64();
    t.example("kappa_400_trial_time", rec.is_ok() && secs <= 60.0, format!("d={} trial took {secs:.1}s (limit 60s)", cfg.grid[0].d));

    let written = std::fs::read_dir(&out).map(|r| r.count()).unwrap_or(0);
    println!("{} files under {}", written, out.display());
    if t.failed.is_empty() {
        println!("acceptance: all criteria and examples passed");
    } else {
        println!("acceptance: failed: {}", t.failed.join(", "));
        std::process::exit(1);
    }
}
