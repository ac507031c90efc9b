//! One PASS/FAIL line per acceptance criterion. Runs sequentially and exits
//! nonzero when any criterion fails.

use std::collections::BTreeSet;
use std::time::Instant;

use epnn_core::arch::{assemble_default, gradient_check_suite, ArchKind};
use epnn_core::datagen::{condition_at, generate_dataset, regenerate_path, Dataset, GenConfig, PathEnd};
use epnn_core::mech::stress_invariants;
use epnn_core::recall::{ground_truth, simulate, Driver};
use epnn_core::train::{
    evaluate, fit_and_train, learning_curve, split, Checkpoint, NormalizedSet, RoleErrors, SampleSet, Splits, TrainConfig,
};
use epnn_core::wg::{critical_void_ratio, drained_triaxial, integrate_path_explicit_oracle, integrate_step};
use epnn_core::{IntegratorTolerances, WgParams};

const DATA_SEED: u64 = 42;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Desk {
    gen: GenConfig,
    ds: Dataset,
    splits: Splits,
    cfg: TrainConfig,
    ckpts: Vec<Checkpoint>,
    test_errors: Vec<RoleErrors>,
}

impl Desk {
    fn sets(&self) -> (SampleSet, SampleSet, SampleSet) {
        (
            SampleSet::from_dataset(&self.splits.train),
            SampleSet::from_dataset(&self.splits.cv),
            SampleSet::from_dataset(&self.splits.test),
        )
    }

    fn epnn(&self) -> &Checkpoint {
        &self.ckpts[2]
    }
}

fn desk() -> Desk {
    let gen = GenConfig::desk_scale(DATA_SEED);
    let ds = generate_dataset(&gen).unwrap();
    let cfg = TrainConfig::default();
    let splits = split(&ds, &cfg).unwrap();
    let mut desk = Desk {
        gen,
        ds,
        splits,
        cfg,
        ckpts: Vec::new(),
        test_errors: Vec::new(),
    };
    let (tr, cv, te) = desk.sets();
    let digest = desk.ds.content_digest();
    for kind in ArchKind::ALL {
        let out = fit_and_train(assemble_default(kind, desk.cfg.seed).unwrap(), &tr, &cv, &desk.cfg, &digest).unwrap();
        let test = NormalizedSet::new(&out.checkpoint.model, &te).unwrap();
        desk.test_errors.push(evaluate(&out.checkpoint, &test).unwrap());
        desk.ckpts.push(out.checkpoint);
    }
    desk
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let rows = gradient_check_suite(5, 8, 1e-6, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.report.max_rel_error).fold(0.0_f64, f64::max);
    let shapes: BTreeSet<&str> = rows.iter().map(|r| r.shape.as_str()).collect();
    let needed = ["13->3x60->1", "13->4x75->3", "13->3x60->3", "10->3x60->1", "scalar"];
    let covered = needed.iter().all(|s| shapes.contains(s));
    let all_checked = rows.iter().all(|r| r.report.checked > 0);
    verdict(
        worst < 1e-6 && covered && all_checked && secs < 120.0,
        format!("max relative error {worst:.2e} over {} reports, shapes {shapes:?}, {secs:.0} s", rows.len()),
    )
}

fn triaxial_consistency(params: &WgParams, tol: &IntegratorTolerances) -> Verdict {
    let (mut worst_f, mut worst_e, mut worst_v, mut plastic) = (0.0_f64, 0.0_f64, 0.0_f64, 0);
    for e_in in [0.55, 0.62, 0.72] {
        let path = drained_triaxial(225.0, e_in, 1e-4, 0.07, params, tol).unwrap();
        let mut e = e_in;
        for pt in &path {
            let r = pt.step;
            worst_e = worst_e.max((r.d_e + (1.0 + e) * pt.d_eps.sum()).abs());
            e = pt.state.e;
            if r.plastic {
                plastic += 1;
                worst_f = worst_f.max(r.yield_value.abs() / pt.state.mean_stress().max(1.0));
                let expect = -r.d_lambda * r.dilatancy;
                worst_v = worst_v.max((r.d_eps_p.sum() - expect).abs() / expect.abs().max(r.d_eps_p.max_abs()));
            }
        }
    }
    verdict(
        plastic > 0 && worst_f <= 1e-9 && worst_e <= 1e-15 && worst_v <= 1e-10,
        format!("{plastic} plastic steps, max |F|/p {worst_f:.1e}, max void-update residual {worst_e:.1e}, max volumetric mismatch {worst_v:.1e}"),
    )
}

fn oracle_equivalence(params: &WgParams, tol: &IntegratorTolerances) -> Verdict {
    let start = Instant::now();
    let gen = GenConfig::paper_scale(DATA_SEED);
    let (c, t, path) = (0..gen.p_grid.len() * gen.e_grid.len())
        .flat_map(|c| (0..gen.tests_per_condition).map(move |t| (c, t)))
        .find_map(|(c, t)| match regenerate_path(&gen, c, t).unwrap() {
            (path, PathEnd::Completed, _) => Some((c, t, path)),
            _ => None,
        })
        .unwrap();
    let mut implicit = path[0].state();
    let mut explicit = implicit;
    for s in &path {
        let d = s.d_eps();
        implicit = integrate_step(&implicit, &d, params, tol).unwrap().apply(&implicit, &d);
        explicit = integrate_path_explicit_oracle(&explicit, &d, 10_000, params).unwrap().apply(&explicit, &d);
    }
    let (a, b) = (stress_invariants(&implicit.sigma), stress_invariants(&explicit.sigma));
    let (ep, eq) = ((a.p - b.p).abs() / b.p, (a.q - b.q).abs() / b.q);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        ep < 0.01 && eq < 0.01 && secs < 300.0,
        format!(
            "path (condition {c}, test {t}) from {:?}, {} steps: p {:.3} vs {:.3} ({:.2}%), q {:.3} vs {:.3} ({:.2}%), {secs:.1} s",
            condition_at(&gen, c),
            path.len(),
            a.p,
            b.p,
            100.0 * ep,
            a.q,
            b.q,
            100.0 * eq
        ),
    )
}

fn critical_state(params: &WgParams, tol: &IntegratorTolerances) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for e_in in [0.55, 0.72] {
        let last = *drained_triaxial(225.0, e_in, 1e-3, 0.5, params, tol).unwrap().last().unwrap();
        let n = last.step.dilatancy;
        let gap = (last.state.e - critical_void_ratio(last.state.mean_stress(), params).unwrap()).abs();
        pass &= n.abs() < 0.01 && gap < 0.005;
        parts.push(format!("e_in {e_in}: |N| {:.4}, |e - e_cs| {gap:.4}", n.abs()));
    }
    verdict(pass, parts.join("; "))
}

fn undrained(desk: &Desk) -> Verdict {
    let driver = Driver::undrained(desk.gen.mean_step_magnitude(), 70).unwrap();
    let truth = ground_truth(&driver, 225.0, 0.62, &desk.gen.params, &desk.gen.tolerances).unwrap();
    let truth_dev = truth.rows.iter().map(|r| (r.e - 0.62).abs()).fold(0.0_f64, f64::max);
    let recall = simulate(&desk.epnn().model, &driver, 225.0, 0.62).unwrap();
    let recall_dev = recall.rows.iter().map(|r| (r.e - 0.62).abs()).fold(0.0_f64, f64::max);
    verdict(
        truth.rows.len() == 71 && recall.rows.len() == 71 && truth_dev <= 1e-14 && recall_dev < 5e-3,
        format!("truth max |e - e_in| {truth_dev:.1e}, EPNN recall max |e - e_in| {recall_dev:.2e} over 70 steps"),
    )
}

fn within_band(values: [f64; 3]) -> bool {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(0.0_f64, f64::max);
    hi <= 1.3 * lo
}

fn architectures(desk: &Desk) -> Verdict {
    let e = &desk.test_errors;
    let ratio = e[2].stress / e[1].stress;
    let void = [e[0].void_ratio, e[1].void_ratio, e[2].void_ratio];
    let plastic = [e[0].plastic_strain, e[1].plastic_strain, e[2].plastic_strain];
    let rows: Vec<String> = ArchKind::ALL
        .iter()
        .zip(e)
        .map(|(k, r)| format!("{k} {:.3}/{:.3}/{:.3}", r.void_ratio, r.plastic_strain, r.stress))
        .collect();
    verdict(
        ratio <= 0.5 && within_band(void) && within_band(plastic),
        format!(
            "{} samples; test % void/plastic/stress: {}; EPNN/serial stress {ratio:.3}; void band {}, plastic band {}",
            desk.ds.len(),
            rows.join(", "),
            within_band(void),
            within_band(plastic)
        ),
    )
}

fn learning_trend(desk: &Desk) -> Verdict {
    let (tr, cv, _) = desk.sets();
    let fractions = [0.05, 0.25, 1.0];
    let points = learning_curve(ArchKind::Parallel, &tr, &cv, &fractions, &desk.cfg, &desk.ds.content_digest()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let name = RoleErrors::NAMES[k];
        for w in points.windows(2) {
            let pooled = |a: f64, b: f64| ((a * a + b * b) / 2.0).sqrt();
            let (t0, t1) = (w[0].train_mean.values()[k], w[1].train_mean.values()[k]);
            let (c0, c1) = (w[0].cv_mean.values()[k], w[1].cv_mean.values()[k]);
            let sd_t = pooled(w[0].train_sd.values()[k], w[1].train_sd.values()[k]);
            let sd_c = pooled(w[0].cv_sd.values()[k], w[1].cv_sd.values()[k]);
            pass &= t1 >= t0 - sd_t && c1 <= c0 + sd_c;
        }
        let fmt = |f: &dyn Fn(usize) -> f64| (0..points.len()).map(|i| format!("{:.2}", f(i))).collect::<Vec<_>>().join(" -> ");
        parts.push(format!(
            "{name} train {} cv {}",
            fmt(&|i| points[i].train_mean.values()[k]),
            fmt(&|i| points[i].cv_mean.values()[k])
        ));
    }
    verdict(pass, format!("fractions {fractions:?}: {}", parts.join("; ")))
}

fn seen_path(desk: &Desk) -> Verdict {
    let gen = &desk.gen;
    let condition = (0..gen.p_grid.len() * gen.e_grid.len())
        .find(|&c| condition_at(gen, c) == (275.0, 0.74))
        .unwrap();
    let (test, path, dir) = (0..gen.tests_per_condition)
        .find_map(|t| match regenerate_path(gen, condition, t).unwrap() {
            (path, PathEnd::Completed, dir) => Some((t, path, dir)),
            _ => None,
        })
        .unwrap();
    let driver = Driver::Proportional {
        direction: dir,
        magnitudes: path.iter().map(|s| s.d_eps().norm()).collect(),
    };
    let model = simulate(&desk.epnn().model, &driver, 275.0, 0.74).unwrap();
    let truth = ground_truth(&driver, 275.0, 0.74, &gen.params, &gen.tolerances).unwrap();
    let mut worst = 1.0_f64;
    let mut band_ok = model.rows.len() == truth.rows.len();
    for (m, t) in model.rows.iter().zip(&truth.rows) {
        if t.gamma > 0.005 {
            let r = m.q / t.q;
            band_ok &= (0.5..=2.0).contains(&r);
            if (r - 1.0).abs() > (worst - 1.0).abs() {
                worst = r;
            }
        }
    }
    let (m, t) = (model.last(), truth.last());
    let end = (m.q - t.q).abs() / t.q;
    verdict(
        band_ok && end < 0.3,
        format!(
            "condition {condition} test {test}, {} steps: worst q ratio {worst:.3}, end q {:.2} vs {:.2} kPa ({:.1}%)",
            path.len(),
            m.q,
            t.q,
            100.0 * end
        ),
    )
}

fn step_size(desk: &Desk) -> Verdict {
    let mean = desk.gen.mean_step_magnitude();
    let finals: Vec<f64> = [(0.5, 140), (1.0, 70), (2.0, 35)]
        .iter()
        .map(|&(f, n)| {
            let driver = Driver::undrained(f * mean, n).unwrap();
            simulate(&desk.epnn().model, &driver, 225.0, 0.62).unwrap().last().q
        })
        .collect();
    let mut sorted = finals.clone();
    sorted.sort_by(f64::total_cmp);
    let spread = (sorted[2] - sorted[0]) / sorted[1];
    verdict(
        spread < 0.2,
        format!("final q at 0.5x/1x/2x steps {:.2}/{:.2}/{:.2} kPa, spread {:.1}%", finals[0], finals[1], finals[2], 100.0 * spread),
    )
}

fn determinism(desk: &Desk) -> Verdict {
    let ds = generate_dataset(&desk.gen).unwrap();
    let same_data = ds.content_digest() == desk.ds.content_digest();
    let ckpt = desk.epnn();
    let sp = split(&ds, &ckpt.config).unwrap();
    let (tr, cv, te) = (
        SampleSet::from_dataset(&sp.train),
        SampleSet::from_dataset(&sp.cv),
        SampleSet::from_dataset(&sp.test),
    );
    let again = fit_and_train(assemble_default(ArchKind::Epnn, ckpt.config.seed).unwrap(), &tr, &cv, &ckpt.config, &ds.content_digest())
        .unwrap()
        .checkpoint;
    let same_ckpt = again == *ckpt && serde_json::to_string(&again).unwrap() == serde_json::to_string(ckpt).unwrap();
    let errors = evaluate(&again, &NormalizedSet::new(&again.model, &te).unwrap()).unwrap();
    let same_errors = errors == desk.test_errors[2];
    verdict(
        same_data && same_ckpt && same_errors,
        format!("dataset digest equal {same_data}, EPNN checkpoint equal {same_ckpt}, test errors equal {same_errors}"),
    )
}

fn main() {
    let params = WgParams::default();
    let tol = IntegratorTolerances::default();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict| {
        println!("criterion {n:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    };
    report(1, "gradient correctness", gradients());
    report(2, "integrator consistency", triaxial_consistency(&params, &tol));
    report(3, "oracle equivalence", oracle_equivalence(&params, &tol));
    report(4, "critical state", critical_state(&params, &tol));
    let start = Instant::now();
    let desk = desk();
    println!("desk training of three architectures took {:.0} s", start.elapsed().as_secs_f64());
    report(5, "undrained identities", undrained(&desk));
    report(6, "architecture comparison", architectures(&desk));
    report(7, "learning-curve trend", learning_trend(&desk));
    report(8, "recall on a seen path", seen_path(&desk));
    report(9, "step-size sensitivity", step_size(&desk));
    report(10, "determinism", determinism(&desk));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
