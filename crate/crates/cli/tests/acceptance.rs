//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use faqsearch_core::ann::{brute_force_topk, build_index, recall_at_k, AnnIndex, IndexParams};
use faqsearch_core::data::synthetic::{ToyCorpus, ToyCorpusSpec};
use faqsearch_core::data::{assign_intent_labels, connected_components, parse_pairs_tsv, LabeledData, PairExample, ParaphraseGraph};
use faqsearch_core::encoder::layers::{aru_forward, attentive_pool, pos_multihead_attention};
use faqsearch_core::encoder::EncoderConfig;
use faqsearch_core::format::PersistError;
use faqsearch_core::model::{Model, ModelConfig};
use faqsearch_core::multitask::{LossWeights, MatchHeadConfig};
use faqsearch_core::numerics::{grad_check, layer_norm, softmax_rows, ParamSet, Tape, Tensor, Var, LAYER_NORM_EPS};
use faqsearch_core::retrieval::{answer_query, build_offline, Artifacts};
use faqsearch_core::training::{self, objective_gradient, Checkpoint, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen::<f64>().max(1e-300);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn model_for(pairs: Vec<PairExample>, encoder: EncoderConfig, lambda: f64, seed: u64) -> (Model, Vec<PairExample>) {
    let data = LabeledData::prepare(pairs, Vec::new(), 1, 4);
    let cfg = ModelConfig {
        encoder,
        match_head: MatchHeadConfig::default(),
        loss: LossWeights { lambda },
        num_classes: data.labeling.num_classes(),
    };
    (Model::new(cfg, data.vocab, data.chars, None, seed).unwrap(), data.train)
}

const PAIRS: &str = "\
how do i reset my password\thow can i reset the password\t1
how can i reset the password\tsteps to reset password\t1
steps to reset password\ti forgot my password\t1
how do i cancel my order\thow can i cancel the order\t1
how can i cancel the order\tsteps to cancel order\t1
steps to cancel order\tplease cancel my order\t1
how do i reset my password\thow do i cancel my order\t0
steps to reset password\tsteps to cancel order\t0
where is my parcel\thow do i reset my password\t0
i forgot my password\tplease cancel my order\t0
";

fn small_pairs() -> Vec<PairExample> {
    parse_pairs_tsv(PAIRS).unwrap()
}

// 1. Gradient suite

fn primitive_errors() -> Vec<(&'static str, f64)> {
    type Build = fn(&mut Tape, &[Var]) -> Var;
    let cases: Vec<(&'static str, Vec<Vec<usize>>, Build)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("add", vec![vec![2, 3], vec![2, 3]], |t, v| t.add(v[0], v[1])),
        ("sub", vec![vec![2, 3], vec![2, 3]], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], |t, v| t.mul(v[0], v[1])),
        ("add_row", vec![vec![3, 4], vec![1, 4]], |t, v| t.add_row(v[0], v[1])),
        ("affine", vec![vec![2, 3]], |t, v| t.affine(v[0], 1.5, 0.25)),
        ("sigmoid", vec![vec![2, 3]], |t, v| t.sigmoid(v[0])),
        ("tanh", vec![vec![2, 3]], |t, v| t.tanh(v[0])),
        ("relu", vec![vec![3, 4]], |t, v| t.relu(v[0])),
        ("softmax_rows", vec![vec![3, 5]], |t, v| t.softmax_rows(v[0])),
        ("layer_norm", vec![vec![3, 5], vec![1, 5], vec![1, 5]], |t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)),
        ("concat_cols", vec![vec![3, 2], vec![3, 3]], |t, v| t.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![vec![2, 3], vec![1, 3]], |t, v| t.concat_rows(&[v[0], v[1]])),
        ("slice", vec![vec![4, 5]], |t, v| t.slice(v[0], 1..3, 0..4)),
        ("transpose", vec![vec![3, 4]], |t, v| t.transpose(v[0])),
        ("reshape", vec![vec![3, 4]], |t, v| t.reshape(v[0], &[4, 3])),
        ("reverse_rows", vec![vec![4, 3]], |t, v| t.reverse_rows(v[0])),
        ("gather", vec![vec![5, 3]], |t, v| t.gather(v[0], vec![Some(1), None, Some(1), Some(4)])),
        ("max_over_rows", vec![vec![5, 3]], |t, v| t.max_over_rows(v[0])),
        ("mean", vec![vec![3, 4]], |t, v| t.mean(v[0])),
        ("gated_average", vec![vec![4, 3], vec![4, 3]], |t, v| {
            let f = t.sigmoid(v[0]);
            t.gated_average(f, v[1])
        }),
        ("cosine", vec![vec![1, 6], vec![1, 6]], |t, v| t.cosine(v[0], v[1])),
        ("bce", vec![vec![1, 1]], |t, v| {
            let p = t.sigmoid(v[0]);
            t.bce(p, 1.0)
        }),
        ("softmax_cross_entropy", vec![vec![1, 5]], |t, v| t.softmax_cross_entropy(v[0], 2)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    cases
        .into_iter()
        .map(|(name, shapes, build)| {
            let mut params = ParamSet::new();
            let ids: Vec<_> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| params.insert(format!("{name}.{i}"), random_tensor(&mut rng, s, 1.0)).unwrap())
                .collect();
            let wrng = ChaCha8Rng::seed_from_u64(2);
            let report = grad_check(
                &params,
                |tape| {
                    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
                    let out = build(tape, &vars);
                    let shape = tape.value(out).shape().to_vec();
                    let w = tape.constant(random_tensor(&mut wrng.clone(), &shape, 1.0));
                    let prod = tape.mul(out, w);
                    tape.sum(prod)
                },
                1e-5,
                None,
            )
            .unwrap();
            (name, report.max_rel_error)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (mut model, pairs) = model_for(small_pairs(), EncoderConfig::tiny(), 0.8, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<_> = model.params.ids().filter(|&id| model.params.is_trainable(id)).collect();
    for id in ids {
        for x in model.params.get_mut(id).data_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    }
    let pos = pairs.iter().position(|p| p.label == 1).unwrap();
    let neg = pairs.iter().position(|p| p.label == 0).unwrap();
    let batch: Vec<_> = [pos, neg]
        .iter()
        .map(|&i| {
            let p = &pairs[i];
            (model.encoder.prepare(&p.q1).unwrap(), model.encoder.prepare(&p.q2).unwrap(), p.label, (p.intent1.unwrap(), p.intent2.unwrap()))
        })
        .collect();
    let full = grad_check(
        &model.params,
        |tape| {
            let losses: Vec<Var> = batch.iter().map(|(a, b, y, c)| model.pair_loss_on(tape, a, b, *y, *c, None).total).collect();
            let total = tape.add_all(&losses);
            tape.scale(total, 0.5)
        },
        1e-5,
        None,
    )
    .unwrap();
    let prims = primitive_errors();
    let (worst_name, worst) = prims.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let elapsed = start.elapsed();
    ensure(
        full.max_rel_error < 1e-4 && worst < 1e-6 && elapsed < Duration::from_secs(120),
        format!(
            "full loss over {} parameters: max rel err {:.2e} (< 1e-4); {} primitives: max {:.2e} in {worst_name} (< 1e-6); {} (< 120 s)",
            full.checked,
            full.max_rel_error,
            prims.len(),
            worst,
            secs(elapsed)
        ),
    )
}

// 2. Layer invariants

fn criterion_2() -> Outcome {
    const CASES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_softmax: f64 = 0.0;
    let (mut worst_mu, mut worst_var): (f64, f64) = (0.0, 0.0);
    for _ in 0..CASES {
        let (r, c) = (rng.gen_range(1..6), rng.gen_range(2..12));
        let x = random_tensor(&mut rng, &[r, c], 20.0);
        let y = softmax_rows(&x);
        for i in 0..r {
            worst_softmax = worst_softmax.max((y.row(i).iter().sum::<f64>() - 1.0).abs());
        }
        let ln = layer_norm(&x, &Tensor::filled(&[1, c], 1.0), &Tensor::zeros(&[1, c]), LAYER_NORM_EPS).unwrap();
        for i in 0..r {
            let row = ln.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            worst_mu = worst_mu.max(mu.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }
    }

    let models: Vec<Model> = (0..4).map(|s| model_for(small_pairs(), EncoderConfig::tiny(), 0.8, s).0).collect();
    let u = EncoderConfig::tiny().u();
    let mut worst_attn: f64 = 0.0;
    let mut aru_violations = 0usize;
    for case in 0..CASES {
        let model = &models[case % models.len()];
        let n = rng.gen_range(1..=16);
        let x = random_tensor(&mut rng, &[n, u], 3.0);
        let mut tape = Tape::new(&model.params);
        let xv = tape.constant(x.clone());
        let (_, heads) = pos_multihead_attention(&mut tape, &model.encoder.weights().aru, xv);
        let (_, pool) = attentive_pool(&mut tape, &model.encoder.weights().pool, xv);
        for a in heads.into_iter().chain([pool]) {
            let a = tape.value(a);
            for i in 0..a.rows() {
                worst_attn = worst_attn.max((a.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
        let y = aru_forward(&mut tape, &model.encoder.weights().aru, xv);
        aru_violations += tape
            .value(y)
            .data()
            .iter()
            .zip(x.data())
            .filter(|&(&yi, &xi)| yi < xi.min(-1.0) - 1e-12 || yi > xi.max(1.0) + 1e-12)
            .count();
    }
    ensure(
        worst_softmax < 1e-9 && worst_attn < 1e-9 && worst_mu < 1e-8 && worst_var < 1e-6 && aru_violations == 0,
        format!(
            "{CASES} cases each: softmax row sum err {worst_softmax:.1e}, attention/pooling row sum err {worst_attn:.1e} (< 1e-9); \
             layer norm |mean| {worst_mu:.1e} (< 1e-8), |var-1| {worst_var:.1e} (< 1e-6); ARU bound violations {aru_violations}"
        ),
    )
}

// 3. Multi-task degeneration

fn criterion_3() -> Outcome {
    let pairs = small_pairs();
    let (mut model, train) = model_for(pairs.clone(), EncoderConfig::tiny(), 1.0, 3);
    let bits = |m: &Model| -> Vec<u64> {
        [m.intent.w, m.intent.b].iter().flat_map(|&id| m.params.get(id).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
    };
    let before = bits(&model);
    let cfg = TrainConfig {
        batch_size: 4,
        max_steps: Some(100),
        max_epochs: 10_000,
        early_stop: false,
        seed: 1,
        ..TrainConfig::default()
    };
    let report = training::train(&mut model, &train, &[], &cfg).map_err(|e| e.to_string())?;
    let unchanged = bits(&model) == before;

    let (model0, train0) = model_for(pairs, EncoderConfig::tiny(), 0.0, 3);
    let (grads, _) = objective_gradient(&model0, &train0).map_err(|e| e.to_string())?;
    let gamma = grads.get(model0.matcher.gamma).item();
    let alpha = grads.get(model0.matcher.alpha).item();
    ensure(
        report.steps == 100 && unchanged && gamma == 0.0 && alpha == 0.0,
        format!(
            "lambda=1: intent head bit-identical after {} steps: {unchanged}; lambda=0: d/dgamma = {gamma}, d/dalpha = {alpha}",
            report.steps
        ),
    )
}

// 4. Graph oracle

fn bfs(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn graph(n: usize, edges: &[(usize, usize)]) -> ParaphraseGraph {
    let mut g = ParaphraseGraph::new();
    for i in 0..n {
        g.add_vertex(format!("q{i}"));
    }
    for &(a, b) in edges {
        g.add_edge(a, b);
    }
    g
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=300);
        let m = rng.gen_range(0..=2 * n);
        let edges: Vec<(usize, usize)> = (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
        if connected_components(&graph(n, &edges)) != bfs(n, &edges) {
            mismatches += 1;
        }
    }
    // components of sizes 3, 4, 5, 1, 2: only sizes above 3 get their own class
    let edges = [(0, 1), (1, 2), (3, 4), (4, 5), (5, 6), (7, 8), (8, 9), (9, 10), (10, 11), (13, 14)];
    let g = graph(15, &edges);
    let lab = assign_intent_labels(&g, &connected_components(&g), 4);
    let class: Vec<usize> = (0..15).map(|i| lab.class_of_key(&format!("q{i}"))).collect();
    let expected = vec![2, 2, 2, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2];
    ensure(
        mismatches == 0 && class == expected && lab.num_classes() == 3,
        format!("1000 random graphs (<= 300 vertices): {mismatches} mismatches vs BFS; min_size=4 fixture classes {class:?}"),
    )
}

// 5. ANN recall

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let vectors: Vec<(u64, Vec<f64>)> = (0..10_000).map(|i| (i, (0..64).map(|_| gaussian(&mut rng)).collect())).collect();
    let queries: Vec<Vec<f64>> = (0..100).map(|_| (0..64).map(|_| gaussian(&mut rng)).collect()).collect();
    let exact: Vec<_> = queries.iter().map(|q| brute_force_topk(&vectors, q, 10).unwrap()).collect();
    let mean_recall = |index: &AnnIndex, budget: usize| {
        queries
            .iter()
            .zip(&exact)
            .map(|(q, e)| recall_at_k(&index.query_topk(q, 10, Some(budget)).unwrap(), e, 10))
            .sum::<f64>()
            / queries.len() as f64
    };
    let forest = build_index(&vectors, IndexParams { num_trees: 16, leaf_capacity: 1, seed: 5 }).unwrap();
    let recall = mean_recall(&forest, 800);
    let degenerate = build_index(&vectors, IndexParams { num_trees: 1, leaf_capacity: 10_000, seed: 5 }).unwrap();
    let degenerate_recall = mean_recall(&degenerate, 800);
    let elapsed = start.elapsed();
    ensure(
        recall >= 0.95 && degenerate_recall == 1.0 && elapsed < Duration::from_secs(60),
        format!(
            "10000 x 64 Gaussian, 16 trees, budget 800: mean recall@10 {recall:.3} (>= 0.95); \
             1 tree with leaf_capacity 10000: {degenerate_recall:.3} (== 1.0); {} (< 60 s)",
            secs(elapsed)
        ),
    )
}

// 6. End-to-end toy pipeline

fn toy_encoder() -> EncoderConfig {
    EncoderConfig {
        word_dim: 24,
        char_dim: 4,
        char_kernel: 3,
        char_filters: 12,
        gru_hidden: 12,
        heads: 2,
        d_a: 12,
        r_hops: 2,
        n_max: 16,
        dropout: 0.1,
        ffn_dim: None,
        highway_layers: 2,
    }
}

fn toy_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 20,
        max_epochs: 100,
        patience: 3,
        seed: 0,
        ..TrainConfig::default()
    }
}

fn held_out_hits(art: &Artifacts, corpus: &ToyCorpus) -> usize {
    corpus
        .held_out
        .iter()
        .filter(|(q, cluster)| {
            let top = &answer_query(art, q, 1).unwrap().results[0];
            corpus.cluster_of[top.id as usize] == *cluster
        })
        .count()
}

fn build_artifacts(dir: &Path, name: &str, model: &Model, corpus: &ToyCorpus) -> Artifacts {
    let ckpt = dir.join(format!("{name}.ckpt"));
    Checkpoint::capture(model, None, 0, 0, None).save(&ckpt).unwrap();
    let faq = dir.join("faq.tsv");
    std::fs::write(&faq, corpus.faq_tsv()).unwrap();
    let out = dir.join(name);
    build_offline(&faq, &ckpt, IndexParams::default(), &out).unwrap();
    Artifacts::load(&out).unwrap()
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let corpus = ToyCorpus::generate(&ToyCorpusSpec::default());
    let (mut model, train) = model_for(corpus.train_pairs.clone(), toy_encoder(), 0.8, 3);
    let report = training::train(&mut model, &train, &[], &toy_train_config()).map_err(|e| e.to_string())?;
    let accuracy = training::evaluate(&model, &train, 0.5).map_err(|e| e.to_string())?.accuracy;

    let dir = tempfile::tempdir().unwrap();
    let art = build_artifacts(dir.path(), "multi", &model, &corpus);
    let mut self_hits = 0;
    let mut worst_cos: f64 = 0.0;
    for r in &corpus.faq {
        let top = &answer_query(&art, &r.question, 1).unwrap().results[0];
        worst_cos = worst_cos.max((top.cosine - 1.0).abs());
        if top.id == r.id && top.question == r.question && (top.cosine - 1.0).abs() <= 1e-6 {
            self_hits += 1;
        }
    }
    let held = held_out_hits(&art, &corpus);
    let elapsed = start.elapsed();

    // single-task comparison, reported only
    let (mut single, train1) = model_for(corpus.train_pairs.clone(), toy_encoder(), 1.0, 3);
    training::train(&mut single, &train1, &[], &toy_train_config()).map_err(|e| e.to_string())?;
    let single_held = held_out_hits(&build_artifacts(dir.path(), "single", &single, &corpus), &corpus);

    ensure(
        accuracy >= 0.95 && self_hits == corpus.faq.len() && held >= 40 && elapsed < Duration::from_secs(600),
        format!(
            "train pair accuracy {accuracy:.3} (>= 0.95) after {} steps (switched to sgd at {:?}); \
             self-retrieval {self_hits}/{} at rank 1, max |cos-1| {worst_cos:.1e} (<= 1e-6); \
             held-out {held}/{} (>= 40); {} (< 600 s); lambda=1 comparison held-out {single_held}/{} (not gated)",
            report.steps,
            report.switched_at,
            corpus.faq.len(),
            corpus.held_out.len(),
            secs(elapsed),
            corpus.held_out.len()
        ),
    )
}

// 7. Overlap-rate statistic

fn criterion_7() -> Outcome {
    // rates: 2*common/(len1+len2)
    let tsv = "\
how do i reset\thow to reset it\t1
reset password\tpassword reset\t1
where is my parcel\ttrack my parcel please\t1
cancel order\treset password\t0
how do i pay\thow do i cancel\t0
open an account today\tclose an account now\t0
";
    let (pos, neg, avg) = ((0.5 + 1.0 + 0.5) / 3.0, (0.0 + 0.75 + 0.5) / 3.0, (2.0 + 1.25) / 6.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.tsv");
    std::fs::write(&path, tsv).unwrap();
    let run = |json: bool| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_faqsearch"));
        cmd.args(["stats", "--pairs", path.to_str().unwrap()]);
        if json {
            cmd.arg("--json");
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let table = run(false);
    let row: Vec<String> = table.lines().nth(1).unwrap_or("").split_whitespace().map(String::from).collect();
    let want_row: Vec<String> = ["3".into(), "3".into(), format!("{pos:.3}"), format!("{neg:.3}"), format!("{avg:.3}")].to_vec();
    let json: serde_json::Value = serde_json::from_str(&run(true)).unwrap();
    let exact = json["pos"].as_f64() == Some(pos) && json["neg"].as_f64() == Some(neg) && json["avg"].as_f64() == Some(avg);
    ensure(
        row == want_row && exact,
        format!("table row {row:?} (want {want_row:?}); full-precision values equal hand computation: {exact}"),
    )
}

// 8. Persistence

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (mut model, train) = model_for(small_pairs(), EncoderConfig::tiny(), 0.8, 8);
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let report = training::train(&mut model, &train, &[], &cfg).map_err(|e| e.to_string())?;
    let ckpt_path = dir.path().join("m.ckpt");
    report.best.save(&ckpt_path).unwrap();
    let ckpt_bytes = std::fs::read(&ckpt_path).unwrap();
    let loaded = Checkpoint::load(&ckpt_path).unwrap();
    let restored = loaded.to_model().unwrap();
    let ckpt_ok = loaded == report.best && loaded.to_bytes() == ckpt_bytes && restored.params == model.params;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vectors: Vec<(u64, Vec<f64>)> = (0..2000).map(|i| (i * 7, (0..32).map(|_| gaussian(&mut rng)).collect())).collect();
    let index = build_index(&vectors, IndexParams { num_trees: 8, leaf_capacity: 4, seed: 3 }).unwrap();
    let index_path = dir.path().join("i.annx");
    faqsearch_core::ann::save_index(&index, &index_path).unwrap();
    let index_bytes = std::fs::read(&index_path).unwrap();
    let reloaded = faqsearch_core::ann::load_index(&index_path).unwrap();
    let same_queries = (0..100).all(|_| {
        let q: Vec<f64> = (0..32).map(|_| gaussian(&mut rng)).collect();
        reloaded.query_topk(&q, 10, None).unwrap() == index.query_topk(&q, 10, None).unwrap()
    });
    let index_ok = reloaded == index && reloaded.to_bytes() == index_bytes && same_queries;

    let classify = |e: PersistError| match e {
        PersistError::BadMagic { .. } => "magic",
        PersistError::Version { .. } => "version",
        PersistError::Truncated => "truncated",
        _ => "other",
    };
    let corruptions = |bytes: &[u8], parse: &dyn Fn(&[u8]) -> Result<(), PersistError>| -> Vec<&'static str> {
        let mut magic = bytes.to_vec();
        magic[0] ^= 0xff;
        let mut version = bytes.to_vec();
        version[4..8].copy_from_slice(&7u32.to_le_bytes());
        let truncated = &bytes[..bytes.len() - 3];
        [magic.as_slice(), version.as_slice(), truncated]
            .iter()
            .map(|b| parse(b).err().map_or("accepted", classify))
            .collect()
    };
    let ckpt_errs = corruptions(&ckpt_bytes, &|b| Checkpoint::from_bytes(b).map(|_| ()));
    let index_errs = corruptions(&index_bytes, &|b| AnnIndex::from_bytes(b).map(|_| ()));
    let want = vec!["magic", "version", "truncated"];
    ensure(
        ckpt_ok && index_ok && ckpt_errs == want && index_errs == want,
        format!(
            "checkpoint round trip bit-exact: {ckpt_ok}; index round trip bit-exact with 100 identical queries: {index_ok}; \
             corrupted checkpoint -> {ckpt_errs:?}; corrupted index -> {index_errs:?}"
        ),
    )
}

// 9. Serving contract

fn strip_latency(text: &str) -> Option<String> {
    let at = text.rfind(",\"latency_ms\":")?;
    text[at + 14..text.len() - 1].parse::<f64>().ok()?;
    Some(format!("{}}}", &text[..at]))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ToyCorpus::generate(&ToyCorpusSpec::default());
    let (model, _) = model_for(corpus.train_pairs.clone(), EncoderConfig::tiny(), 0.8, 9);
    let art = Arc::new(build_artifacts(dir.path(), "art", &model, &corpus));
    let texts: Vec<String> = corpus.held_out.iter().map(|(q, _)| q.clone()).chain(corpus.faq.iter().take(50).map(|r| r.question.clone())).collect();
    let direct: Vec<String> = texts
        .iter()
        .map(|t| format!("{{\"results\":{}}}", serde_json::to_string(&answer_query(&art, t, 5).unwrap().results).unwrap()))
        .collect();

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let url = format!("http://{}/query", listener.local_addr().unwrap());
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(faqsearch_serve::serve_until(listener, faqsearch_serve::router(Arc::clone(&art)), async {
            let _ = stopped.await;
        }));
        let client = reqwest::Client::new();
        let ask = |text: String| {
            let (client, url) = (client.clone(), url.clone());
            async move {
                let resp = client
                    .post(&url)
                    .header("content-type", "application/json")
                    .body(serde_json::json!({"text": text, "k": 5}).to_string())
                    .send()
                    .await
                    .unwrap();
                (resp.status().as_u16(), resp.text().await.unwrap())
            }
        };
        let mut serial = Vec::new();
        for t in &texts {
            serial.push(ask(t.clone()).await);
        }
        let identical = serial.iter().zip(&direct).filter(|((s, body), d)| *s == 200 && strip_latency(body).as_ref() == Some(d)).count();
        let tasks: Vec<_> = texts.iter().map(|t| tokio::spawn(ask(t.clone()))).collect();
        let mut concurrent_ok = 0;
        for (task, (_, serial_body)) in tasks.into_iter().zip(&serial) {
            let (status, body) = task.await.unwrap();
            if status == 200 && strip_latency(&body) == strip_latency(serial_body) {
                concurrent_ok += 1;
            }
        }
        stop.send(()).unwrap();
        server.await.unwrap().unwrap();
        ensure(
            identical == texts.len() && concurrent_ok == texts.len(),
            format!(
                "/query byte-identical to answer_query (ignoring latency_ms): {identical}/{}; {} concurrent requests matching serial: {concurrent_ok}/{}",
                texts.len(),
                texts.len(),
                texts.len()
            ),
        )
    })
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", criterion_1),
        ("layer invariants", criterion_2),
        ("multi-task degeneration", criterion_3),
        ("graph oracle", criterion_4),
        ("ANN recall", criterion_5),
        ("end-to-end toy pipeline", criterion_6),
        ("overlap-rate statistic", criterion_7),
        ("persistence", criterion_8),
        ("serving contract", criterion_9),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(detail) => {
                println!("criterion {n} ({name}): FAIL: {detail}");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
