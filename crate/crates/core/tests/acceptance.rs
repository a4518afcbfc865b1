//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use seqconf::conformal::{
    filter_predict, lf_score, rf_score, twf_predict_with, twf_score, Method, Side,
};
use seqconf::datagen::{generate, GenConfig, PositionLaw};
use seqconf::domain::{Interval, PredictionSet, Trajectory, XScore};
use seqconf::eval::{self, rollback_metrics, run_split, split_eval, RecoveryModel};
use seqconf::rng::{derive_seed_str, stream};
use seqconf::scoring::{
    aggregate_scores, measure_auroc, tune_scorer, AggregatorConfig, SyntheticScorerConfig,
};
use seqconf::ConformalConfig;

const SEED: u64 = 20_260_415;
const SPLITS: usize = 1000;
/// n = m = 200.
const N_TOTAL: usize = 400;
const TOL: f64 = 0.015;
const SUM: AggregatorConfig = AggregatorConfig::SumNorm;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Shape violations seen by any harness run, for the shape criterion.
static SHAPE_VIOLATIONS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
static SHAPE_CHECKED: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

fn record_shapes(r: &eval::EvalReport) {
    use std::sync::atomic::Ordering::Relaxed;
    SHAPE_VIOLATIONS.fetch_add(r.aggregate.shape_violations, Relaxed);
    SHAPE_CHECKED.fetch_add(r.n_splits * (N_TOTAL - N_TOTAL / 2), Relaxed);
}

fn evaluate(data: &[Trajectory], method: Method, alpha: f64) -> eval::EvalReport {
    let r = split_eval(
        data,
        &ConformalConfig::new(method, alpha),
        SPLITS,
        0.5,
        SEED,
    )
    .unwrap();
    record_shapes(&r);
    r
}

fn scorer_076() -> SyntheticScorerConfig {
    tune_scorer(0.76, &mut stream(derive_seed_str(SEED, "tune"))).unwrap()
}

fn dataset(
    position: PositionLaw,
    scorer: SyntheticScorerConfig,
    len: (usize, usize),
    key: &str,
) -> Vec<Trajectory> {
    generate(&GenConfig {
        n: N_TOTAL,
        len_min: len.0,
        len_max: len.1,
        position,
        scorer,
        seed: derive_seed_str(SEED, key),
    })
    .unwrap()
}

fn coverage_sandwich(data: &[Trajectory]) -> Outcome {
    let mut pass = true;
    let mut cells = Vec::new();
    for method in [Method::Vcp, Method::Lf, Method::Rf, Method::Twf] {
        for alpha in [0.1, 0.2, 0.3] {
            let r = evaluate(data, method, alpha);
            let lo = 1.0 - alpha - TOL;
            let hi = 1.0 - alpha + 1.0 / 201.0 + TOL;
            let ec = r.aggregate.ec_mean;
            let ok = (lo..=hi).contains(&ec);
            pass &= ok;
            let inf = r.per_split.iter().filter(|s| s.q_hat.is_infinite()).count();
            cells.push(format!(
                "{method}@{alpha}={ec:.4}{}{}",
                if ok { "" } else { "!" },
                if inf > 0 {
                    format!("(q=inf in {inf})")
                } else {
                    String::new()
                }
            ));
        }
    }
    Outcome {
        pass,
        detail: cells.join(" "),
    }
}

fn crsvp_lower_bound(data: &[Trajectory]) -> Outcome {
    let mut pass = true;
    let mut cells = Vec::new();
    for alpha in [0.1, 0.2, 0.3] {
        let r = evaluate(data, Method::Crsvp, alpha);
        let ok = r.aggregate.ec_mean >= 1.0 - alpha - TOL;
        pass &= ok;
        cells.push(format!(
            "crsvp@{alpha}={:.4}{}",
            r.aggregate.ec_mean,
            if ok { "" } else { "!" }
        ));
    }
    Outcome {
        pass,
        detail: cells.join(" "),
    }
}

/// Random instance with a monotone (sum-normalized, non-negative) aggregate.
fn random_instance(i: u64) -> Trajectory {
    use rand::Rng;
    let mut r = stream(derive_seed_str(SEED ^ i, "instance"));
    let len = r.gen_range(1..=14);
    let label = r.gen_range(1..=len);
    // Coarse grid so ties between interval scores are common.
    let scores = (0..len)
        .map(|_| f64::from(r.gen_range(0..=8u32)) / 8.0)
        .collect();
    Trajectory::new(format!("i{i}"), scores, Some(label)).unwrap()
}

/// Every distinct aggregate over suffixes and prefixes, plus `+∞`.
fn candidate_thresholds(t: &Trajectory) -> Vec<XScore> {
    let s = t.scores().unwrap();
    let len = s.len();
    let mut c: Vec<XScore> = (1..=len)
        .flat_map(|m| [Interval::new(len + 1 - m, len), Interval::new(1, m)])
        .map(|iv| aggregate_scores(&SUM, s, iv).unwrap())
        .collect();
    c.push(XScore::ZERO);
    c.push(XScore::Infinite);
    c.sort();
    c.dedup();
    c
}

fn proposition_oracles() -> Outcome {
    let mut mismatches = 0;
    for i in 0..1000 {
        let t = random_instance(i);
        let s = t.scores().unwrap();
        let (len, j) = (t.len(), t.label().unwrap());
        // Generic q_min: minimum over every suffix containing j*.
        let lf_oracle = (1..=j)
            .map(|lo| aggregate_scores(&SUM, s, Interval::new(lo, len)).unwrap())
            .min()
            .unwrap();
        let lf = lf_score(&t, &SUM).unwrap();
        let rf = rf_score(&t, &SUM).unwrap();
        let twf = twf_score(&t, &SUM).unwrap();
        // Brute force: the smallest candidate threshold whose TWF set keeps j*.
        let infimum = candidate_thresholds(&t)
            .into_iter()
            .find(|&q| {
                twf_predict_with(&t, &SUM, q, false, false)
                    .unwrap()
                    .set
                    .contains(j)
            })
            .unwrap();
        if lf != lf_oracle || twf != lf.max(rf) || twf != infimum {
            mismatches += 1;
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("1000 instances, {mismatches} mismatches"),
    }
}

fn set_at(method: Method, t: &Trajectory, q: XScore) -> PredictionSet {
    match method {
        Method::Lf => filter_predict(Side::Left, t, &SUM, q, true).unwrap().set,
        Method::Rf => filter_predict(Side::Right, t, &SUM, q, true).unwrap().set,
        Method::Twf => twf_predict_with(t, &SUM, q, true, false).unwrap().set,
        _ => unreachable!(),
    }
}

fn subset(a: &PredictionSet, b: &PredictionSet) -> bool {
    match (a.as_interval(), b.as_interval()) {
        (Some(x), Some(y)) => x.is_subset_of(&y),
        _ => false,
    }
}

fn lemma_suites() -> Outcome {
    use rand::Rng;
    let mut counter = 0;
    let mut r = stream(derive_seed_str(SEED, "lemmas"));
    for i in 0..1000 {
        let t = random_instance(10_000 + i);
        let j = t.label().unwrap();
        let cands = candidate_thresholds(&t);
        let pick = |r: &mut rand_chacha::ChaCha8Rng| {
            if r.gen_bool(0.5) {
                cands[r.gen_range(0..cands.len())]
            } else {
                XScore::finite(r.gen_range(0.0..1.2))
            }
        };
        let (a, b) = (pick(&mut r), pick(&mut r));
        let (q1, q2) = (a.min(b), a.max(b));
        for method in [Method::Lf, Method::Rf, Method::Twf] {
            let (s1, s2) = (set_at(method, &t, q1), set_at(method, &t, q2));
            if !subset(&s1, &s2) || !method.shape_ok(&s1, t.len()) || !method.shape_ok(&s2, t.len())
            {
                counter += 1;
            }
            let score = match method {
                Method::Lf => lf_score(&t, &SUM).unwrap(),
                Method::Rf => rf_score(&t, &SUM).unwrap(),
                _ => twf_score(&t, &SUM).unwrap(),
            };
            for q in [q1, q2] {
                if set_at(method, &t, q).contains(j) != (score <= q) {
                    counter += 1;
                }
            }
        }
    }
    Outcome {
        pass: counter == 0,
        detail: format!("1000 instances x {{lf, rf, twf}}, {counter} counterexamples"),
    }
}

fn shape_guarantees() -> Outcome {
    use std::sync::atomic::Ordering::Relaxed;
    let v = SHAPE_VIOLATIONS.load(Relaxed);
    Outcome {
        pass: v == 0,
        detail: format!(
            "{} predictions checked, {v} violations",
            SHAPE_CHECKED.load(Relaxed)
        ),
    }
}

fn nfe_counts(uniform: &[Trajectory], left: &[Trajectory]) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for method in [Method::Vcp, Method::Twf] {
        let r = evaluate(uniform, method, 0.2);
        let exact = r.per_split.iter().all(|s| s.mean_nfe == s.mean_len);
        pass &= exact;
        notes.push(format!(
            "{method} nfe={:.3} len={:.3}{}",
            r.aggregate.nfe_mean,
            r.aggregate.len_mean,
            if exact { "" } else { "!" }
        ));
    }

    let fixed = dataset(
        PositionLaw::Uniform,
        SyntheticScorerConfig::near_oracle(),
        (8, 8),
        "nfe-l8",
    );
    let lf = evaluate(&fixed, Method::Lf, 0.2).aggregate.nfe_mean;
    let target = (8.0 + 1.0) / 2.0;
    let ok = (lf - target).abs() <= 0.1 * target;
    pass &= ok;
    notes.push(format!(
        "lf(l=8,near-oracle) nfe={lf:.3} vs {target}{}",
        if ok { "" } else { "!" }
    ));

    let lf_left = evaluate(left, Method::Lf, 0.2).aggregate.nfe_mean;
    let rf_left = evaluate(left, Method::Rf, 0.2).aggregate.nfe_mean;
    let ok = rf_left < 0.5 * lf_left;
    pass &= ok;
    notes.push(format!(
        "left-dense rf={rf_left:.3} lf={lf_left:.3}{}",
        if ok { "" } else { "!" }
    ));
    Outcome {
        pass,
        detail: notes.join("; "),
    }
}

fn rr_ordering(left: &[Trajectory], mid: &[Trajectory], right: &[Trajectory]) -> Outcome {
    let rr = |d: &[Trajectory], m| evaluate(d, m, 0.2).aggregate.rr_mean;
    let (l_lf, l_rf) = (rr(left, Method::Lf), rr(left, Method::Rf));
    let (r_lf, r_rf) = (rr(right, Method::Lf), rr(right, Method::Rf));
    let (m_lf, m_rf, m_twf) = (
        rr(mid, Method::Lf),
        rr(mid, Method::Rf),
        rr(mid, Method::Twf),
    );
    let pass = l_rf > l_lf && r_lf > r_rf && m_twf >= m_lf && m_twf >= m_rf;
    Outcome {
        pass,
        detail: format!(
            "left rf={l_rf:.3}>lf={l_lf:.3}; right lf={r_lf:.3}>rf={r_rf:.3}; mid twf={m_twf:.3} lf={m_lf:.3} rf={m_rf:.3}"
        ),
    }
}

fn scorer_tuning() -> Outcome {
    let mut pass = true;
    let mut cells = Vec::new();
    for (k, target) in [0.519, 0.554, 0.762].into_iter().enumerate() {
        let cfg = tune_scorer(
            target,
            &mut stream(derive_seed_str(SEED, &format!("tune{k}"))),
        )
        .unwrap();
        let measured = measure_auroc(
            &cfg,
            10_000,
            &mut stream(derive_seed_str(SEED, &format!("check{k}"))),
        )
        .unwrap();
        let ok = (measured - target).abs() <= 0.03;
        pass &= ok;
        cells.push(format!(
            "{target}->{measured:.4}{}",
            if ok { "" } else { "!" }
        ));
    }
    Outcome {
        pass,
        detail: cells.join(" "),
    }
}

fn rollback(data: &[Trajectory]) -> Outcome {
    let cfg = ConformalConfig::new(Method::Lf, 0.2);
    let reports =
        eval::rollback_sim(data, &cfg, SPLITS, 0.5, &RecoveryModel::default(), SEED).unwrap();
    let cov = reports[0].coverage;
    let mut pass = (0.75..=0.87).contains(&cov);

    // Exact coverage/cost against a direct recount, and the degenerate
    // recovery models, on a handful of splits.
    let mut exact = true;
    for i in 0..20 {
        let out = run_split(data, &cfg, 0.5, SEED, i).unwrap();
        let tests: Vec<&Trajectory> = out.test_indices.iter().map(|&k| &data[k]).collect();
        let labels: Vec<usize> = tests.iter().map(|t| t.label().unwrap()).collect();
        let lengths: Vec<usize> = tests.iter().map(|t| t.len()).collect();
        let sets: Vec<PredictionSet> = out.predictions.iter().map(|p| p.set.clone()).collect();
        let (mut hits, mut cost) = (0usize, 0.0f64);
        for ((s, &j), &len) in sets.iter().zip(&labels).zip(&lengths) {
            let point = s.first().unwrap_or(len + 1);
            hits += usize::from(point <= j);
            cost += (len + 1 - point) as f64 / len as f64;
        }
        let m = sets.len() as f64;
        for (p_cov, p_uncov) in [(1.0, 1.0), (0.0, 0.0), (1.0, 0.0)] {
            let rm = RecoveryModel { p_cov, p_uncov };
            let o = rollback_metrics(&sets, &labels, &lengths, &rm, &mut stream(i as u64)).unwrap();
            let want_success = if p_cov == p_uncov {
                p_cov
            } else {
                hits as f64 / m
            };
            exact &= o.coverage == hits as f64 / m
                && (o.cost - cost / m).abs() < 1e-12
                && o.success_rate == want_success;
        }
    }
    pass &= exact;
    Outcome {
        pass,
        detail: format!(
            "lf coverage={cov:.4} cost={:.4}; top1 coverage={:.4} cost={:.4}; recount {}",
            reports[0].cost,
            reports[1].coverage,
            reports[1].cost,
            if exact { "exact" } else { "MISMATCH" }
        ),
    }
}

fn seqconf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_seqconf"))
        .args(args)
        .output()
        .unwrap()
}

fn same_outputs(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    !names.is_empty()
        && names
            .iter()
            .all(|n| fs::read(a.join(n)).ok() == fs::read(b.join(n)).ok())
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let data = format!("{}/data.jsonl", p("gen"));
    let model = format!("{}/model.json", p("cal"));
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "generate",
            vec![
                "generate",
                "--n",
                "200",
                "--density",
                "left",
                "--auroc",
                "0.76",
                "--seed",
                "7",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "calibrate",
            vec![
                "calibrate".into(),
                "--in".into(),
                data.clone(),
                "--method".into(),
                "crsvp".into(),
                "--alpha".into(),
                "0.2".into(),
            ],
        ),
        (
            "predict",
            vec![
                "predict".into(),
                "--in".into(),
                data.clone(),
                "--model".into(),
                model.clone(),
            ],
        ),
        (
            "evaluate",
            vec![
                "evaluate".into(),
                "--in".into(),
                data.clone(),
                "--method".into(),
                "lf,twf".into(),
                "--alpha".into(),
                "0.2".into(),
                "--splits".into(),
                "50".into(),
                "--seed".into(),
                "7".into(),
            ],
        ),
        (
            "coverage-curve",
            vec![
                "coverage-curve".into(),
                "--in".into(),
                data.clone(),
                "--splits".into(),
                "20".into(),
            ],
        ),
        (
            "rollback-sim",
            vec![
                "rollback-sim".into(),
                "--in".into(),
                data.clone(),
                "--splits".into(),
                "50".into(),
            ],
        ),
    ];
    let dirs = ["gen", "cal", "pred", "eval", "curve", "roll"];
    let mut failures = Vec::new();
    for ((name, args), dir) in commands.iter().zip(dirs) {
        let mut first: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = p(dir);
        first.extend(["--out", &out]);
        let o = seqconf(&first);
        if !o.status.success() {
            failures.push(format!(
                "{name}: {}",
                String::from_utf8_lossy(&o.stderr).trim()
            ));
            continue;
        }
        let manifest = format!("{out}/manifest.json");
        let again = p(&format!("{dir}-rerun"));
        let o = seqconf(&["rerun", &manifest, "--out", &again]);
        if !o.status.success() || !same_outputs(Path::new(&out), Path::new(&again)) {
            failures.push(format!("{name}: rerun differs"));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{} commands replayed byte-identically", commands.len())
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let started = Instant::now();
    let scorer = scorer_076();
    let uniform = dataset(PositionLaw::Uniform, scorer, (5, 12), "uniform");
    let left = dataset(PositionLaw::Left, scorer, (5, 12), "left");
    let mid = dataset(PositionLaw::Mid, scorer, (5, 12), "mid");
    let right = dataset(PositionLaw::Right, scorer, (5, 12), "right");

    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "coverage sandwich", coverage_sandwich(&uniform)),
        (2, "crsvp lower bound", crsvp_lower_bound(&uniform)),
        (3, "proposition oracles", proposition_oracles()),
        (4, "lemma property suites", lemma_suites()),
        (6, "nfe accounting", nfe_counts(&uniform, &left)),
        (7, "rr ordering", rr_ordering(&left, &mid, &right)),
        (8, "scorer tuning", scorer_tuning()),
        (9, "rollback", rollback(&uniform)),
        (10, "cli determinism", cli_determinism()),
    ];
    // Shapes are checked on every harness prediction made above.
    results.push((5, "shape guarantees", shape_guarantees()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, o) in &results {
        failed += usize::from(!o.pass);
        println!(
            "criterion {n:>2} {:<22} {}  {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
