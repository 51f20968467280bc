//! Acceptance run: every criterion prints one `PASS`/`FAIL` line and the
//! binary exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use num_rational::Ratio;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hmlstm::baselines::{knn_predict, BaseLearner, Learner, LearnerKind, LearnerSpec};
use hmlstm::cli::{execute, Cli};
use hmlstm::corpus::{gen_synthetic, split, SyntheticSpec, Taxonomy};
use hmlstm::embedding::CbowParams;
use hmlstm::eval::{confusion, evaluate, exact_metrics, macro_f1, micro_f1};
use hmlstm::model::{check_gradients, resolve_prediction, ConsistencyMode, GradCheckSpec, HmlstmConfig};
use hmlstm::nn::{lstm_step, LstmParams, LstmState};
use hmlstm::pipeline::{train_embeddings, train_hmlstm, train_strategy, StrategySettings, TrainedModel};
use hmlstm::preprocess::PreprocessOptions;
use hmlstm::strategies::{train_hier, FeatureKind, Strategy};
use num_bigint::BigInt;
use num_rational::BigRational;

type Q = Ratio<i128>;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn big(q: &BigRational) -> Option<Q> {
    let n: i128 = q.numer().try_into().ok()?;
    let d: i128 = q.denom().try_into().ok()?;
    Some(Q::new(n, d))
}

// 1 ---------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let spec = GradCheckSpec {
        docs: 3,
        tokens: 8,
        hidden: 8,
        ..GradCheckSpec::default()
    };
    match check_gradients(&spec) {
        Ok(r) => {
            let secs = t0.elapsed().as_secs_f64();
            outcome(
                r.max_rel_error < 1e-4 && secs < 30.0,
                format!("{} parameters, max relative error {:.2e}, {secs:.1}s", r.checked, r.max_rel_error),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

// 2 ---------------------------------------------------------------------

/// Brute-force scores from per-document label sets with plain integer
/// ratios. Returns (accuracy, micro-F1, macro-F1).
fn oracle(preds: &[Vec<String>], golds: &[Vec<String>], labels: &[&str]) -> (Q, Q, Q) {
    let f1 = |tp: i128, fp: i128, fn_: i128| {
        // 2PR/(P+R) with P = tp/(tp+fp), R = tp/(tp+fn) simplifies to 2tp/(2tp+fp+fn).
        if tp == 0 {
            Q::from_integer(0)
        } else {
            Q::new(2 * tp, 2 * tp + fp + fn_)
        }
    };
    let (mut stp, mut sfp, mut sfn) = (0i128, 0i128, 0i128);
    let mut macro_sum = Q::from_integer(0);
    for l in labels {
        let (mut tp, mut fp, mut fn_) = (0i128, 0i128, 0i128);
        for (p, g) in preds.iter().zip(golds) {
            let inp = p.iter().any(|x| x == l);
            let ing = g.iter().any(|x| x == l);
            match (inp, ing) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        stp += tp;
        sfp += fp;
        sfn += fn_;
        macro_sum += f1(tp, fp, fn_);
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count() as i128;
    (
        Q::new(hits, preds.len() as i128),
        f1(stp, sfp, sfn),
        macro_sum / Q::from_integer(labels.len() as i128),
    )
}

fn metric_oracle() -> Outcome {
    let tax = Taxonomy::undhtc();
    let labels = tax.all_labels();
    let top = tax.labels_at_level(1);
    let sub = tax.labels_at_level(2);
    let paths = tax.leaf_paths();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for set in 0..200 {
        let n = rng.random_range(1..=40);
        let golds: Vec<Vec<String>> = (0..n).map(|_| paths[rng.random_range(0..paths.len())].clone()).collect();
        let preds: Vec<Vec<String>> = golds
            .iter()
            .map(|g| match rng.random_range(0..4) {
                0 => g.clone(),
                1 => paths[rng.random_range(0..paths.len())].clone(),
                // any pair, consistent or not
                _ => vec![
                    top[rng.random_range(0..top.len())].to_string(),
                    sub[rng.random_range(0..sub.len())].to_string(),
                ],
            })
            .collect();
        let (acc, micro, macro_) = oracle(&preds, &golds, &labels);
        let exact = match exact_metrics(&preds, &golds, &tax) {
            Ok(e) => e,
            Err(e) => return outcome(false, e.to_string()),
        };
        let got = (big(&exact.accuracy), big(&exact.micro.f1), big(&exact.macro_.mean.f1));
        if got != (Some(acc), Some(micro), Some(macro_)) {
            return outcome(false, format!("set {set}: got {got:?}, oracle {:?}", (acc, micro, macro_)));
        }
        let report = evaluate(&preds, &golds, &tax).expect("valid paths");
        let as_f = |q: Q| q.to_f64().expect("finite");
        if report.accuracy != as_f(acc) || report.micro_f1 != as_f(micro) || report.macro_f1 != as_f(macro_) {
            return outcome(false, format!("set {set}: float report differs from the exact oracle"));
        }
    }
    outcome(true, "200 random sets over 12 labels, exact agreement")
}

// 3 ---------------------------------------------------------------------

fn hand_worked() -> Outcome {
    let v = |x: &[&str]| x.iter().map(|s| vec![s.to_string()]).collect::<Vec<_>>();
    let gold = v(&["A", "B", "A"]);
    let pred = v(&["A", "A", "B"]);
    let c = confusion(&pred, &gold, &["A", "B"]).expect("known labels");
    let third = BigRational::new(BigInt::from(1), BigInt::from(3));
    let quarter = BigRational::new(BigInt::from(1), BigInt::from(4));
    let ok = c.micro_exact().f1 == third
        && c.macro_exact().mean.f1 == quarter
        && micro_f1(&c).f1 == 1.0 / 3.0
        && macro_f1(&c).f1 == 0.25;
    outcome(ok, format!("micro-F1 {}, macro-F1 {}", c.micro_exact().f1, c.macro_exact().mean.f1))
}

// 4 ---------------------------------------------------------------------

fn lstm_zero() -> Outcome {
    let p = LstmParams::zeros(6, 5);
    let x = [0.3, -1.2, 4.0, 0.0, 7.5];
    let (state, cache) = lstm_step(&p, &x, &LstmState::zeros(6)).expect("shapes match");
    let half = |v: &[f64]| v.iter().all(|&g| g == 0.5);
    let ok = half(&cache.f)
        && half(&cache.i)
        && half(&cache.o)
        && cache.g.iter().all(|&g| g == 0.0)
        && state.c.iter().all(|&c| c == 0.0)
        && state.h.iter().all(|&h| h == 0.0);
    outcome(ok, "f = i = o = 0.5, candidate 0, h = c = 0")
}

// 5 ---------------------------------------------------------------------

fn synthetic_cbow() -> CbowParams {
    CbowParams {
        epochs: 20,
        ..CbowParams::default()
    }
}

fn synthetic_end_to_end() -> Outcome {
    let t0 = Instant::now();
    let spec = SyntheticSpec {
        branching: vec![3, 3],
        docs_per_leaf: 50,
        noise_rate: 0.05,
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec, 7).expect("valid spec");
    let (train, test) = split(&ds, 0.2, 7).expect("valid fraction");
    let opts = PreprocessOptions::default();
    let emb = Arc::new(train_embeddings(&train, &opts, &synthetic_cbow()).expect("corpus").0);

    let settings = StrategySettings {
        strategy: Strategy::Flat,
        learner: LearnerSpec::new(LearnerKind::LogReg),
        features: FeatureKind::DocVector,
        max_seq_len: 128,
        mask: false,
    };
    let flat = TrainedModel::Strategy(train_strategy(&train, emb.clone(), &opts, &settings).expect("trains"));
    let flat_acc = flat.evaluate(&test, &opts, None).expect("evaluates").accuracy;

    let cfg = HmlstmConfig {
        epochs: 10,
        ..HmlstmConfig::default()
    };
    let (model, history) = train_hmlstm(&train, emb, &opts, &cfg).expect("trains");
    let lstm_acc = TrainedModel::Hmlstm(model)
        .evaluate(&test, &opts, None)
        .expect("evaluates")
        .accuracy;
    let elapsed = t0.elapsed();
    outcome(
        lstm_acc >= 0.95 && flat_acc >= 0.85 && lstm_acc >= flat_acc && elapsed < Duration::from_secs(300),
        format!(
            "HMLSTM {lstm_acc:.4} after {} epochs, flat LR {flat_acc:.4}, {:.0}s",
            history.epochs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// 6 ---------------------------------------------------------------------

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Features scattered around one centre per leaf of `tax`.
fn blobs(tax: &Taxonomy, per_leaf: usize, spread: f64, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<String>>) {
    let paths = tax.leaf_paths();
    let dim = paths.len();
    let mut x = Vec::new();
    let mut gold = Vec::new();
    for (i, path) in paths.into_iter().enumerate() {
        for _ in 0..per_leaf {
            let mut row: Vec<f64> = (0..dim).map(|_| rng.random_range(-spread..spread)).collect();
            row[i] += 3.0;
            x.push(row);
            gold.push(path.clone());
        }
    }
    (x, gold)
}

fn consistency() -> Outcome {
    let tax = Taxonomy::undhtc();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut consistent = 0;
    for _ in 0..10_000 {
        let p1 = random_simplex(&mut rng, 3);
        let mut p2 = random_simplex(&mut rng, 9);
        // sometimes all the mass sits outside the chosen branch
        if rng.random_range(0..10) == 0 {
            let keep = rng.random_range(0..9);
            p2.iter_mut().enumerate().for_each(|(i, p)| *p = if i == keep { 1.0 } else { 0.0 });
        }
        if tax.is_consistent(&resolve_prediction(&tax, p1, p2, ConsistencyMode::Mask).labels) {
            consistent += 1;
        }
    }

    let (x, gold) = blobs(&tax, 15, 2.5, &mut rng);
    let mut strategy_ok = 0;
    let mut strategy_total = 0;
    for strategy in [Strategy::PerNode, Strategy::PerParent] {
        let spec = LearnerSpec::new(LearnerKind::LogReg);
        let clf = train_hier(strategy, || spec.build(), &tax, &x, &gold, false).expect("trains");
        for _ in 0..2_000 {
            let q: Vec<f64> = (0..9).map(|_| rng.random_range(-4.0..4.0)).collect();
            strategy_total += 1;
            if tax.is_consistent(&clf.predict(&q)) {
                strategy_ok += 1;
            }
        }
    }
    outcome(
        consistent == 10_000 && strategy_ok == strategy_total,
        format!("mask {consistent}/10000, per-node and per-parent {strategy_ok}/{strategy_total}"),
    )
}

// 7 ---------------------------------------------------------------------

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn embedding_clusters() -> Outcome {
    let spec = SyntheticSpec {
        branching: vec![2],
        docs_per_leaf: 200,
        noise_rate: 0.0,
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec, 11).expect("valid spec");
    let emb = train_embeddings(&ds, &PreprocessOptions::default(), &synthetic_cbow())
        .expect("corpus")
        .0;
    let vectors = |leaf: usize| -> Vec<Vec<f64>> {
        spec.signature(leaf)
            .iter()
            .filter_map(|w| emb.vocab.get(w).map(|i| emb.matrix.row(i).to_vec()))
            .collect()
    };
    let (a, b) = (vectors(0), vectors(1));
    let mean = |pairs: Vec<f64>| pairs.iter().sum::<f64>() / pairs.len() as f64;
    let mut intra = Vec::new();
    for group in [&a, &b] {
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                intra.push(cosine(&group[i], &group[j]));
            }
        }
    }
    let inter: Vec<f64> = a.iter().flat_map(|u| b.iter().map(move |v| cosine(u, v))).collect();
    let (intra, inter) = (mean(intra), mean(inter));
    outcome(
        a.len() == spec.vocab_per_leaf && b.len() == spec.vocab_per_leaf && intra - inter >= 0.2,
        format!("intra {intra:.3}, inter {inter:.3}, gap {:.3}", intra - inter),
    )
}

// 8 ---------------------------------------------------------------------

fn run(args: &[&str]) -> Result<String, String> {
    let cli = Cli::try_parse_from(std::iter::once("hmlstm").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    execute(&cli, &mut out).map_err(|e| e.to_string())?;
    Ok(String::from_utf8_lossy(&out).into_owned())
}

fn determinism_in(dir: &Path) -> Result<Outcome, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    run(&["gen-synthetic", "--output", &p("syn.tsv"), "--docs-per-leaf", "12", "--seed", "5"])?;
    fs::write(
        p("small.toml"),
        "seed = 9\n[cbow]\ndim = 16\nepochs = 3\nmin_count = 1\n[hmlstm]\nhidden1 = 8\nhidden2 = 8\ndense_size = 8\nepochs = 2\n",
    )
    .map_err(|e| e.to_string())?;
    let mut identical = true;
    for kind in ["hmlstm", "per-parent:logreg"] {
        let mut bytes = Vec::new();
        for run_ix in 0..2 {
            let out = p(&format!("{}-{run_ix}.ck", kind.replace(':', "-")));
            run(&["train", "--kind", kind, "--data", &p("syn.tsv"), "--config", &p("small.toml"), "--output", &out])?;
            bytes.push(fs::read(&out).map_err(|e| e.to_string())?);
        }
        identical &= bytes[0] == bytes[1];
    }

    let tax = Taxonomy::undhtc();
    let paths = tax.leaf_paths();
    let mut f = std::io::BufWriter::new(fs::File::create(p("dummy.tsv")).map_err(|e| e.to_string())?);
    writeln!(f, "id\ttext\tcategory\tsubcategory").map_err(|e| e.to_string())?;
    for i in 0..51_325 {
        let path = &paths[i % paths.len()];
        writeln!(f, "d{i}\tخبر {i}\t{}\t{}", path[0], path[1]).map_err(|e| e.to_string())?;
    }
    drop(f);
    let msg = run(&["split", "--input", &p("dummy.tsv"), "--train", &p("tr.tsv"), "--test", &p("te.tsv"), "--seed", "1"])?;
    let lines = |f: &str| fs::read_to_string(p(f)).map(|s| s.lines().count() - 1).unwrap_or(0);
    let sizes = (lines("tr.tsv"), lines("te.tsv"));
    Ok(outcome(
        identical && sizes == (41_060, 10_265),
        format!("checkpoints identical: {identical}; split {} / {} ({})", sizes.0, sizes.1, msg.trim()),
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    determinism_in(dir.path()).unwrap_or_else(|e| outcome(false, e))
}

// 9 ---------------------------------------------------------------------

fn brute_force_knn(x: &[Vec<f64>], y: &[u8], q: &[f64], k: usize) -> u8 {
    let mut order: Vec<(f64, usize)> = x
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<u8, (usize, f64)> = BTreeMap::new();
    for &(d2, i) in &order[..k] {
        let e = votes.entry(y[i]).or_default();
        e.0 += 1;
        e.1 += 1.0 / d2.sqrt();
    }
    let top = votes.values().map(|v| v.0).max().expect("k >= 1");
    let tied: Vec<(u8, f64)> = votes.iter().filter(|(_, v)| v.0 == top).map(|(l, v)| (*l, v.1)).collect();
    let best = tied.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    tied.iter().find(|t| t.1 == best).expect("non-empty").0
}

fn knn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<Vec<f64>> = (0..300).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<u8> = (0..300).map(|_| rng.random_range(0..5)).collect();
    let mut agree = 0;
    for t in 0..1000 {
        let q: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = [1, 2, 3, 4, 5, 7][t % 6];
        if knn_predict(&x, &y, &q, k).ok() == Some(brute_force_knn(&x, &y, &q, k)) {
            agree += 1;
        }
    }
    outcome(agree == 1000, format!("{agree}/1000 agree"))
}

// 10 --------------------------------------------------------------------

/// Wraps a learner; when `forced` is set it always answers that class.
struct Faulty {
    inner: Learner,
    forced: Option<usize>,
}

impl BaseLearner for Faulty {
    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> hmlstm::Result<()> {
        self.inner.fit(x, y, n_classes)
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        match self.forced {
            Some(c) => (0..self.n_classes()).map(|i| if i == c { 1.0 } else { 0.0 }).collect(),
            None => self.inner.scores(x),
        }
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.scores(x)
    }

    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }
}

fn error_propagation() -> Outcome {
    let tax = Taxonomy::undhtc();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (x, gold) = blobs(&tax, 20, 0.5, &mut rng);
    let spec = LearnerSpec::new(LearnerKind::LogReg);
    let clf = train_hier(Strategy::PerParent, || spec.build(), &tax, &x, &gold, false).expect("trains");
    let clean = x.iter().zip(&gold).filter(|(r, g)| &clf.predict(r) == *g).count();

    let root_classes = clf.learner("root").expect("root learner").classes.clone();
    let tech = root_classes.iter().position(|c| c == "Technology").expect("Technology at root");
    let broken = clf.map_learners(|key, inner| Faulty {
        inner,
        forced: (key == "root").then_some(tech),
    });
    let tech_children: BTreeSet<&str> = tax.children(Some("Technology")).into_iter().collect();
    let under = x
        .iter()
        .map(|r| broken.predict(r))
        .filter(|p| p[0] == "Technology" && tech_children.contains(p[1].as_str()))
        .count();
    outcome(
        under == x.len(),
        format!("clean accuracy {clean}/{}; after fault {under}/{} under Technology", x.len(), x.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient check", gradient_check),
        ("metric oracle equivalence", metric_oracle),
        ("hand-worked metrics", hand_worked),
        ("LSTM zero step", lstm_zero),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("consistency", consistency),
        ("embedding clusters", embedding_clusters),
        ("determinism", determinism),
        ("kNN oracle", knn_oracle),
        ("error propagation", error_propagation),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        let tag = if o.ok { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag} {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.ok);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
