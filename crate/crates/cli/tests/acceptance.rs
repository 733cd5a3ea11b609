//! Acceptance criteria 1-9, run in order with one PASS/FAIL line each.
//!
//! Every criterion runs even if an earlier one fails; the test fails at the
//! end if any did. Lines go straight to stderr so they show without
//! `--nocapture`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ctxquant::baseline::{encode_baseline, reconstruct_matrix, train_pq, CodebookSet, KMeansConfig};
use ctxquant::codestore::{
    becr_ratio, codebooks_from_bytes, codebooks_to_bytes, embeddings_from_bytes, embeddings_to_bytes,
    network_from_bytes, network_to_bytes, pack_codes, space_report, store_from_bytes, store_to_bytes,
    unpack_codes, EmbeddingFile, SpaceModel,
};
use ctxquant::cq::{reconstruct_document, CqDecoder};
use ctxquant::eval::{fidelity_report, kendall_tau, mrr_at_k, ndcg_at_k, Qrels, Run, RunEntry};
use ctxquant::gradcheck::random_gradcheck;
use ctxquant::synth::oracle::{
    code_search_bruteforce, kendall_tau_naive, maxsim_bruteforce, mrr_naive, ndcg_naive,
};
use ctxquant::synth::{gen_corpus, gen_queries, gen_training_queries, ranking_triples, SynthConfig, SynthQuery};
use ctxquant::train::{maxsim_teacher, train_cq, LossKind, TrainConfig};
use ctxquant::{
    kmeans, maxsim_score, quantize_corpus, rerank, CQParams, Code, CodeStore, DocIndepTable, DocumentTokens,
    EmbeddingMatrix, Mode, QuantizerSpec, RerankRequest, SplitMix64,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what} = {got}, expected {want} ± {tol}"))
}

fn random_matrix(rng: &mut SplitMix64, rows: usize, dim: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::new(rows, dim, (0..rows * dim).map(|_| rng.gaussian() as f32).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// 1. space model

fn space_model() -> Outcome {
    let m = SpaceModel {
        docs: 8.8e6,
        mean_tokens: 67.5,
        vocab: 32000.0,
        dim: 128,
        books: 16,
        codewords: 256,
        sub_dim: 8,
        bytes_per_float: 2,
        token_id_bytes: 2,
    };
    let r = space_report(&m).map_err(|e| e.to_string())?;
    ensure(r.codebook_bytes == 131_072.0, || format!("codebook_bytes = {}", r.codebook_bytes))?;
    ensure(r.doc_indep_bytes == 16_384_000.0, || format!("doc_indep_bytes = {}", r.doc_indep_bytes))?;
    close(r.ratio_colbert_to_cq, 14.22, 0.01, "compression ratio")?;
    let becr = becr_ratio(16, 256, 2).map_err(|e| e.to_string())?;
    close(becr, 8.89, 0.01, "becr ratio")?;
    ensure(r.colbert_baseline_bytes == 1.52064e11, || format!("colbert bytes = {}", r.colbert_baseline_bytes))?;
    close(r.codes_bytes, 1.0692e10, 1.0, "codes bytes")?;
    let vs_reported = (r.codes_bytes - 10.2e9).abs() / 10.2e9;
    ensure(vs_reported <= 0.10, || format!("codes bytes {} off 10.2e9 by {vs_reported:.3}", r.codes_bytes))?;
    Ok(format!(
        "ratio {:.2}, becr {becr:.2}, codes {:.4e} ({:.1}% from 10.2e9)",
        r.ratio_colbert_to_cq,
        r.codes_bytes,
        100.0 * vs_reported
    ))
}

// ---------------------------------------------------------------------------
// 2. gradients

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for (m, k, d) in [(2, 4, 8), (4, 8, 16)] {
        for seed in 0..10 {
            let r = random_gradcheck(seed, Mode::Product, m, k, d).map_err(|e| e.to_string())?;
            ensure(r.max_rel_error < 1e-4, || format!("M={m} K={k} D={d} seed {seed}: {r:?}"))?;
            worst = worst.max(r.max_rel_error);
            entries += r.checked;
        }
    }
    Ok(format!("20 models, {entries} entries, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 3. bit packing and file formats

fn rejects_damage(bytes: &[u8], parse: impl Fn(&[u8]) -> bool, name: &str) -> Result<(), String> {
    for len in 0..bytes.len() {
        ensure(!parse(&bytes[..len]), || format!("{name}: accepted a {len}-byte prefix"))?;
    }
    let mut bad = bytes.to_vec();
    bad[0] ^= 0xff;
    ensure(!parse(&bad), || format!("{name}: accepted a bad magic"))
}

fn packing_and_formats() -> Outcome {
    let mut rng = SplitMix64::new(3);
    let ks = [2usize, 4, 16, 256];
    for case in 0..10_000 {
        let k = ks[case % ks.len()];
        let m = 1 + rng.index(16);
        let spec = QuantizerSpec::new(Mode::Additive, m, k, 4).unwrap();
        let codes: Vec<Code> = (0..rng.index(40))
            .map(|_| Code::new((0..m).map(|_| rng.index(k) as u32).collect()))
            .collect();
        let packed = pack_codes(&codes, &spec).map_err(|e| e.to_string())?;
        let back = unpack_codes(&packed, codes.len(), &spec).map_err(|e| e.to_string())?;
        ensure(back == codes, || format!("case {case}: K={k} M={m} did not round-trip"))?;
    }

    let cfg = SynthConfig {
        docs: 6,
        vocab: 32,
        tokens_per_doc: 5,
        dim: 8,
        cluster_count: 2,
        candidates: 4,
        hard_negatives: 1,
        ..SynthConfig::default()
    };
    let (table, docs) = gen_corpus(&cfg).unwrap();
    let emb = EmbeddingFile::new(8, docs.clone()).unwrap();
    let bytes = embeddings_to_bytes(&emb).unwrap();
    let back = embeddings_from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure(back == emb && embeddings_to_bytes(&back).unwrap() == bytes, || "embeddings round trip".into())?;
    rejects_damage(&bytes, |b| embeddings_from_bytes(b).is_ok(), "embeddings")?;

    let spec = QuantizerSpec::new(Mode::Product, 4, 16, 8).unwrap();
    let params = CQParams::init(spec, true, 5).unwrap();
    let bytes = network_to_bytes(&params).unwrap();
    let back = network_from_bytes(&bytes).map_err(|e| e.to_string())?;
    // files hold f32, so the in-memory f64 values come back rounded
    let rounded = |t: [&[f64]; 7]| -> Vec<f32> { t.iter().flat_map(|v| v.iter().map(|&x| x as f32)).collect() };
    ensure(rounded(back.tensors()) == rounded(params.tensors()), || "network values changed".into())?;
    ensure(network_to_bytes(&back).unwrap() == bytes, || "network bytes differ".into())?;
    rejects_damage(&bytes, |b| network_from_bytes(b).is_ok(), "network")?;

    let codes = quantize_corpus(&params, &docs, &table).unwrap();
    let bytes = store_to_bytes(&spec, &codes).unwrap();
    let back = store_from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure(back.docs() == codes.as_slice() && back.spec() == &spec, || "store round trip".into())?;
    ensure(store_to_bytes(back.spec(), back.docs()).unwrap() == bytes, || "store bytes differ".into())?;
    rejects_damage(&bytes, |b| store_from_bytes(b).is_ok(), "store")?;

    let cb = params.codebooks.clone();
    let bytes = codebooks_to_bytes(&cb).unwrap();
    let back = codebooks_from_bytes(&bytes).map_err(|e| e.to_string())?;
    let narrow = |c: &CodebookSet| -> Vec<f32> { c.as_slice().iter().map(|&x| x as f32).collect() };
    ensure(back.spec() == cb.spec() && narrow(&back) == narrow(&cb), || "codebook values changed".into())?;
    ensure(codebooks_to_bytes(&back).unwrap() == bytes, || "codebook bytes differ".into())?;
    rejects_damage(&bytes, |b| codebooks_from_bytes(b).is_ok(), "codebooks")?;

    Ok("10000 code lists; embeddings, store, codebooks and network files exact".into())
}

// ---------------------------------------------------------------------------
// 4. quantizer oracles

fn quantizer_oracles() -> Outcome {
    let mut rng = SplitMix64::new(8);
    let mut vectors = 0;
    for m in 1..=3 {
        for k in [2, 3, 5, 8] {
            let h = 1 + rng.index(3);
            let spec = QuantizerSpec::new(Mode::Product, m, k, m * h).unwrap();
            let cb = CodebookSet::from_data(spec, (0..m * k * h).map(|_| rng.gaussian()).collect()).unwrap();
            for _ in 0..17 {
                let x: Vec<f32> = (0..m * h).map(|_| rng.gaussian() as f32).collect();
                let fast = encode_baseline(&cb, &x).map_err(|e| e.to_string())?;
                let slow = code_search_bruteforce(&cb, &x).map_err(|e| e.to_string())?;
                ensure(fast == slow, || format!("M={m} K={k}: {fast:?} vs {slow:?}"))?;
                vectors += 1;
            }
        }
    }
    ensure(vectors >= 200, || format!("only {vectors} vectors"))?;

    for seed in 0..10 {
        let pts: Vec<f64> = (0..400 * 4).map(|_| rng.gaussian()).collect();
        let km = kmeans(&pts, 4, 12, &KMeansConfig::new(40, seed)).map_err(|e| e.to_string())?;
        for w in km.mse_history.windows(2) {
            ensure(w[1] <= w[0], || format!("seed {seed}: Lloyd MSE rose {} -> {}", w[0], w[1]))?;
        }
    }

    let x = random_matrix(&mut rng, 8, 6);
    let spec = QuantizerSpec::new(Mode::Product, 3, 8, 6).unwrap();
    let cb = train_pq(&x, &spec, &KMeansConfig::new(10, 1)).map_err(|e| e.to_string())?;
    let mse = reconstruct_matrix(&cb, &x).unwrap().mean_squared_error(&x).unwrap();
    ensure(mse == 0.0, || format!("K = points but reconstruction MSE {mse}"))?;
    Ok(format!("{vectors} brute-force encodes, 10 monotone Lloyd runs, K = points exact"))
}

// ---------------------------------------------------------------------------
// 5. MaxSim and metric oracles

fn maxsim_and_metrics() -> Outcome {
    let mut rng = SplitMix64::new(5);
    for i in 0..100 {
        let dim = 1 + rng.index(12);
        let (qn, dn) = (1 + rng.index(8), 1 + rng.index(30));
        let q = random_matrix(&mut rng, qn, dim);
        let d = random_matrix(&mut rng, dn, dim);
        let fast = maxsim_score(&q, &d).map_err(|e| e.to_string())?;
        let slow = maxsim_bruteforce(&q, &d);
        ensure((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0), || format!("instance {i}: {fast} vs {slow}"))?;
    }

    let mut runs = 0;
    while runs < 50 {
        let mut run = Run::new();
        let mut qrels = Qrels::new();
        let mut rel = HashMap::new();
        let mut ranked = Vec::new();
        for q in 0..1 + rng.index(6) {
            let qid = format!("q{q}");
            let n = 1 + rng.index(15);
            let mut scores: Vec<f64> = (0..n).map(|i| i as f64 + 0.5 * rng.next_f64()).collect();
            rng.shuffle(&mut scores);
            let entries = (0..n)
                .map(|i| RunEntry {
                    doc_id: format!("d{i}"),
                    score: scores[i],
                })
                .collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            ranked.push((qid.clone(), order.iter().map(|i| format!("d{i}")).collect()));
            run.insert(qid.clone(), entries).unwrap();
            for i in 0..n + 3 {
                if rng.index(3) == 0 {
                    let grade = rng.index(4) as u32;
                    qrels.insert(qid.clone(), format!("d{i}"), grade);
                    rel.insert((qid.clone(), format!("d{i}")), grade);
                }
            }
        }
        if rel.is_empty() {
            continue;
        }
        runs += 1;
        for k in [1, 3, 10] {
            let m = mrr_at_k(&run, &qrels, k).map_err(|e| e.to_string())?;
            let n = ndcg_at_k(&run, &qrels, k).map_err(|e| e.to_string())?;
            close(m, mrr_naive(&ranked, &rel, k), 1e-12, "mrr")?;
            close(n, ndcg_naive(&ranked, &rel, k), 1e-12, "ndcg")?;
        }
        let a: Vec<usize> = (0..2 + rng.index(30)).collect();
        let mut b = a.clone();
        rng.shuffle(&mut b);
        close(kendall_tau(&a, &b).unwrap(), kendall_tau_naive(&a, &b), 1e-12, "tau")?;
    }

    for n in [2usize, 3, 10, 101] {
        let a: Vec<usize> = (0..n).collect();
        let r: Vec<usize> = a.iter().rev().copied().collect();
        ensure(kendall_tau(&a, &a).unwrap() == 1.0, || format!("tau(identical) != 1 for n={n}"))?;
        ensure(kendall_tau(&a, &r).unwrap() == -1.0, || format!("tau(reversed) != -1 for n={n}"))?;
    }
    Ok("100 MaxSim instances, 50 runs, tau extremes exact".into())
}

// ---------------------------------------------------------------------------
// 6. decomposition benefit

fn cq_warmup(seed: u64, steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    cfg.warmup.steps = steps;
    cfg.warmup.lr = 1e-3;
    cfg.warmup.batch = 128;
    cfg.finetune.steps = 0;
    cfg
}

fn decomposition_benefit() -> Outcome {
    let mut lines = Vec::new();
    let mut worst_factor = f64::INFINITY;
    for seed in 0..3 {
        let cfg = SynthConfig {
            seed,
            delta_scale: 0.2,
            ..SynthConfig::default()
        };
        let (table, docs) = gen_corpus(&cfg).unwrap();
        let spec = QuantizerSpec::new(Mode::Product, 4, 16, cfg.dim).unwrap();
        let params = train_cq(spec, &docs, &table, &[], &maxsim_teacher, &cq_warmup(seed, 3000)).unwrap();
        let codes = quantize_corpus(&params, &docs, &table).unwrap();
        let (mut sse, mut tokens) = (0.0, 0.0);
        for (c, d) in codes.iter().zip(&docs) {
            let r = reconstruct_document(&params, c, &table).unwrap();
            sse += r.mean_squared_error(&d.embeddings).unwrap() * d.len() as f64;
            tokens += d.len() as f64;
        }
        let cq = sse / tokens;

        let raw = EmbeddingFile::new(cfg.dim, docs).unwrap().flatten();
        let cb = train_pq(&raw, &spec, &KMeansConfig::new(25, seed)).unwrap();
        let pq = reconstruct_matrix(&cb, &raw).unwrap().mean_squared_error(&raw).unwrap();
        ensure(cq < pq, || format!("seed {seed}: CQ MSE {cq:.5} not below PQ {pq:.5}"))?;
        worst_factor = worst_factor.min(pq / cq);
        lines.push(format!("seed {seed}: cq {cq:.4} pq {pq:.4} ({:.2}x)", pq / cq));
    }
    let target = if worst_factor >= 2.0 { "target 2x met" } else { "below 2x target" };
    Ok(format!("{}; {target}", lines.join(", ")))
}

// ---------------------------------------------------------------------------
// 7. distillation direction

fn student_run(params: &CQParams, table: &DocIndepTable, docs: &[DocumentTokens], qs: &[SynthQuery]) -> Run {
    let store = CodeStore::new(*params.spec(), quantize_corpus(params, docs, table).unwrap()).unwrap();
    let decoder = CqDecoder { params, table };
    let mut run = Run::new();
    for q in qs {
        let req = RerankRequest {
            query: q.query.clone(),
            candidates: q.candidates.clone(),
            k: q.candidates.len(),
        };
        run.insert_scored(q.qid.to_string(), &rerank(&req, &store, &decoder).unwrap())
            .unwrap();
    }
    run
}

fn distillation_direction() -> Outcome {
    let out_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&out_dir).unwrap();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..3 {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let (table, docs) = gen_corpus(&cfg).unwrap();
        let eval_queries = gen_queries(&cfg, &docs).unwrap();
        let train_queries = gen_training_queries(&cfg, &docs, 400).unwrap();
        let triples = ranking_triples(&train_queries, &docs).unwrap();
        let spec = QuantizerSpec::new(Mode::Product, 4, 16, cfg.dim).unwrap();

        let warm = cq_warmup(seed, 2000);
        let mut tuned = warm;
        tuned.finetune.steps = 1000;
        tuned.finetune.lr = 1e-3;
        tuned.finetune.pairs_per_batch = 32;
        tuned.finetune.loss = LossKind::MarginMse;
        let base = train_cq(spec, &docs, &table, &triples, &maxsim_teacher, &warm).unwrap();
        let ft = train_cq(spec, &docs, &table, &triples, &maxsim_teacher, &tuned).unwrap();

        let mut teacher = Run::new();
        for q in &eval_queries {
            teacher.insert_scored(q.qid.to_string(), &q.teacher).unwrap();
        }
        let before = fidelity_report(&teacher, &student_run(&base, &table, &docs, &eval_queries)).unwrap();
        let after = fidelity_report(&teacher, &student_run(&ft, &table, &docs, &eval_queries)).unwrap();
        let table_path = out_dir.join(format!("fidelity_seed{seed}.tsv"));
        std::fs::write(&table_path, after.pairs_table()).unwrap();
        let (b, a) = (before.median_tau().unwrap(), after.median_tau().unwrap());
        lines.push(format!("seed {seed}: {b:.4} -> {a:.4}"));
        if a < b {
            failures.push(format!("seed {seed}: median tau fell {b:.4} -> {a:.4}"));
        }
    }
    let summary = format!("median tau, MSE-only -> MarginMSE: {}", lines.join(", "));
    if failures.is_empty() {
        Ok(format!("{summary}; tables in {}", out_dir.display()))
    } else {
        Err(format!("{summary}; {}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// 8. cost-model scaling

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - (my + slope * (x - mx))).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn cost_scaling() -> Outcome {
    let cfg = SynthConfig {
        docs: 400,
        tokens_per_doc: 32,
        dim: 64,
        ..SynthConfig::default()
    };
    let (table, docs) = gen_corpus(&cfg).unwrap();
    let spec = QuantizerSpec::new(Mode::Product, 8, 16, 64).unwrap();
    let params = CQParams::init(spec, false, 0).unwrap();
    let codes = quantize_corpus(&params, &docs, &table).unwrap();
    let time_k = |k: usize| {
        (0..15)
            .map(|_| {
                let start = Instant::now();
                for c in &codes[..k] {
                    std::hint::black_box(reconstruct_document(&params, c, &table).unwrap());
                }
                start.elapsed()
            })
            .min()
            .unwrap_or(Duration::ZERO)
    };
    time_k(400);
    let ks = [100.0, 200.0, 400.0];
    let times: Vec<f64> = ks.iter().map(|&k| time_k(k as usize).as_secs_f64()).collect();
    let r2 = r_squared(&ks, &times);
    let detail = format!(
        "min times {:.2} / {:.2} / {:.2} ms, R^2 {r2:.4}",
        times[0] * 1e3,
        times[1] * 1e3,
        times[2] * 1e3
    );
    ensure(r2 > 0.98, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 9. end-to-end determinism

/// The README demo, one command line per step; temp paths contain no spaces.
fn demo_steps(dir: &Path) -> Vec<Vec<String>> {
    let d = dir.display();
    [
        format!("synth --out-dir {d} --seed 0 --train-queries 100"),
        format!(
            "train-cq --input {d}/corpus.cqem --table {d}/table.cqem --out {d}/model.cqnn --M 4 --K 16 \
             --steps 1000 --finetune-steps 200 --loss margin-mse --queries {d}/train_queries.cqem \
             --teacher-run {d}/train_teacher.run --seed 0"
        ),
        format!("encode --input {d}/corpus.cqem --model {d}/model.cqnn --table {d}/table.cqem --out {d}/store.cqst"),
        format!(
            "rerank --store {d}/store.cqst --model {d}/model.cqnn --table {d}/table.cqem --queries {d}/queries.cqem \
             --candidates {d}/candidates.txt --k 20 --out {d}/student.run"
        ),
        format!("eval --run {d}/student.run --qrels {d}/qrels.txt --metric mrr@10"),
        format!("fidelity --teacher {d}/teacher.run --student {d}/student.run --out {d}/fidelity.tsv"),
        "space-report --Z 8800000 --n 67.5 --D 128 --M 16 --K 256".to_string(),
    ]
    .iter()
    .map(|line| line.split_whitespace().map(String::from).collect())
    .collect()
}

/// Runs the demo into `dir`; returns every output file and the concatenated reports.
fn run_demo(dir: &Path) -> Result<(BTreeMap<PathBuf, Vec<u8>>, String), String> {
    let mut reports = String::new();
    for args in demo_steps(dir) {
        let o = Command::new(env!("CARGO_BIN_EXE_ctxquant"))
            .args(&args)
            .env("RUST_LOG", "error")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || {
            format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr))
        })?;
        reports.push_str(&String::from_utf8_lossy(&o.stdout));
    }
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = PathBuf::from(path.file_name().unwrap());
        files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok((files, reports))
}

fn end_to_end_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (files_a, reports_a) = run_demo(a.path())?;
    let (files_b, reports_b) = run_demo(b.path())?;
    ensure(files_a.keys().eq(files_b.keys()), || "different output file sets".into())?;
    for (name, bytes) in &files_a {
        ensure(files_b[name] == *bytes, || format!("{} differs between runs", name.display()))?;
    }
    ensure(reports_a == reports_b, || "stdout reports differ".into())?;
    let mrr = reports_a.lines().find(|l| l.starts_with("mrr@10=")).unwrap_or("mrr@10=?");
    let tau = reports_a.lines().find(|l| l.starts_with("median_tau=")).unwrap_or("median_tau=?");
    Ok(format!("{} files identical, {mrr}, {tau}", files_a.len()))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("space model", space_model),
        ("gradient correctness", gradients),
        ("bit packing and file formats", packing_and_formats),
        ("quantizer oracles", quantizer_oracles),
        ("MaxSim and metric oracles", maxsim_and_metrics),
        ("decomposition benefit", decomposition_benefit),
        ("distillation direction", distillation_direction),
        ("cost-model scaling", cost_scaling),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(detail) => format!("PASS {} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => format!("FAIL {} {name} ({secs:.1}s): {detail}", i + 1),
        };
        writeln!(std::io::stderr(), "{line}").unwrap();
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
