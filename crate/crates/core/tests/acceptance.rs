//! Acceptance suite. Runs every criterion, prints one verdict line per
//! criterion, and exits non-zero if any of them fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use pau::io::{
    decode_checkpoint, decode_embeddings, encode_checkpoint, encode_embeddings, encode_pairs,
    parse_pairs,
};
use pau::metrics::query_ranks;
use pau::proto::{gradients, TrainOutcome};
use pau::rerank::default_grid;
use pau::{
    dirichlet_from_evidence, entropy, evaluate_retrieval, generate_corpus,
    init_prototypes, jsd, loss_div, msvd_collision_logprob, pearson, removal_curve,
    similarity_matrix, softmax, train, uncertainty_from_similarities, uncertainty_scores,
    batch_means, Checkpoint, Direction, EmbeddingSet, EvidenceConfig, EvidenceKind, Matrix,
    Modality, PairSet, PrototypeBank, RemovalMode, RemovalSide, RerankParams, RerankProblem, SimilarityMatrix,
    SyntheticCorpus, SyntheticSpec, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

const ACCEPT_LR: f64 = 1e-3;
const ACCEPT_EPOCHS: usize = 50;
const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn accept_config(seed: u64, lambda_div: f64) -> TrainConfig {
    TrainConfig {
        epochs: ACCEPT_EPOCHS,
        learning_rate: ACCEPT_LR,
        lambda_div,
        seed,
        ..TrainConfig::default()
    }
}

fn train_on(corpus: &SyntheticCorpus, cfg: &TrainConfig) -> Result<TrainOutcome, String> {
    train(&corpus.vis, &corpus.txt, &corpus.pairs, cfg).map_err(err)
}

fn scores(
    vis: &EmbeddingSet,
    txt: &EmbeddingSet,
    model: &TrainOutcome,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<f64>), String> {
    let uv = uncertainty_scores(vis, &model.bank_t, &cfg.evidence).map_err(err)?;
    let ut = uncertainty_scores(txt, &model.bank_v, &cfg.evidence).map_err(err)?;
    Ok((uv, ut))
}

fn dirichlet_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for kind in EvidenceKind::ALL {
        let cfg = EvidenceConfig::with_kind(kind);
        for _ in 0..1000 {
            let k = rng.random_range(1..=16);
            let e: Vec<f64> = (0..k).map(|_| cfg.evidence(rng.random_range(-1.0..=1.0))).collect();
            let st = dirichlet_from_evidence(&e).map_err(err)?;
            let mass = st.psi + st.beliefs.iter().sum::<f64>();
            let u_ref = 1.0 - k as f64 / st.strength;
            worst = worst.max((mass - 1.0).abs()).max((st.u - u_ref).abs());
            ensure((0.0..1.0).contains(&st.u), || format!("u = {} out of [0, 1)", st.u))?;
            count += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("{count} vectors, max deviation {worst:.1e}"))
}

fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn total_loss(
    vis: &EmbeddingSet,
    txt: &EmbeddingSet,
    bv: &Matrix,
    bt: &Matrix,
    cfg: &TrainConfig,
) -> Result<f64, String> {
    let bank_v = PrototypeBank::new(Modality::Vision, bv.clone()).map_err(err)?;
    let bank_t = PrototypeBank::new(Modality::Text, bt.clone()).map_err(err)?;
    Ok(gradients(vis, txt, &bank_v, &bank_t, cfg).map_err(err)?.losses.total)
}

fn gradient_check() -> Verdict {
    const STEP: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for case in 0..20 {
        let n = rng.random_range(2..=16);
        let k = rng.random_range(1..=8);
        let d = rng.random_range(2..=32);
        let vis = EmbeddingSet::from_rows(Modality::Vision, &random_unit_rows(&mut rng, n, d))
            .map_err(err)?;
        let txt = EmbeddingSet::from_rows(Modality::Text, &random_unit_rows(&mut rng, n, d))
            .map_err(err)?;
        let bank_v = init_prototypes(Modality::Vision, k, d, case).map_err(err)?;
        let bank_t = init_prototypes(Modality::Text, k, d, case + 100).map_err(err)?;
        for kind in EvidenceKind::ALL {
            let cfg = TrainConfig {
                k,
                lambda_div: rng.random_range(0.0..2.0),
                evidence: EvidenceConfig::with_kind(kind),
                ..TrainConfig::default()
            };
            let g = gradients(&vis, &txt, &bank_v, &bank_t, &cfg).map_err(err)?;
            for (side, analytic) in [(0, &g.vision), (1, &g.text)] {
                let scale = analytic.max_abs().max(1e-8);
                for idx in 0..k * d {
                    let central = |h: f64| -> Result<f64, String> {
                        let mut plus = [bank_v.vectors().clone(), bank_t.vectors().clone()];
                        let mut minus = plus.clone();
                        plus[side].as_mut_slice()[idx] += h;
                        minus[side].as_mut_slice()[idx] -= h;
                        let lp = total_loss(&vis, &txt, &plus[0], &plus[1], &cfg)?;
                        let lm = total_loss(&vis, &txt, &minus[0], &minus[1], &cfg)?;
                        Ok((lp - lm) / (2.0 * h))
                    };
                    let fd = (4.0 * central(STEP / 2.0)? - central(STEP)?) / 3.0;
                    let a = analytic.as_slice()[idx];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3 * scale);
                    worst = worst.max(rel);
                    checks += 1;
                }
            }
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("{checks} coordinates, max relative error {worst:.1e}"))
}

fn entropy_theorems() -> Verdict {
    for k in 2..=64usize {
        let h = entropy(&vec![1.0 / k as f64; k]).map_err(err)?;
        ensure((h - (k as f64).ln()).abs() <= 1e-9, || {
            format!("entropy of uniform({k}) = {h}")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let k = rng.random_range(2..=32usize);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let uniform = vec![1.0 / k as f64; k];
        let mut prev: Option<(f64, f64)> = None;
        for step in 0..=20 {
            let t = step as f64 / 20.0;
            let mut mix: Vec<f64> = p.iter().map(|x| (1.0 - t) * x + t / k as f64).collect();
            let s: f64 = mix.iter().sum();
            mix.iter_mut().for_each(|x| *x /= s);
            let h = entropy(&mix).map_err(err)?;
            let j = jsd(&mix, &uniform).map_err(err)?;
            if let Some((ph, pj)) = prev {
                ensure(h >= ph && j <= pj, || {
                    format!("case {case} step {step}: entropy {ph}->{h}, jsd {pj}->{j}")
                })?;
            }
            prev = Some((h, j));
        }
    }
    Ok("uniform K in 2..=64, 200 mixing paths".into())
}

fn msvd_probability() -> Verdict {
    let lp = msvd_collision_logprob(48_000, 256, 40).map_err(err)?;
    ensure((lp - -28.685).abs() <= 0.5, || format!("log P = {lp}"))?;
    Ok(format!("log P = {lp:.4}"))
}

fn uncertainty_correlation() -> Verdict {
    let corpus = generate_corpus(&SyntheticSpec::default()).map_err(err)?;
    let cfg = accept_config(7, 1.0);
    let model = train_on(&corpus, &cfg)?;
    let (uv, ut) = scores(&corpus.vis, &corpus.txt, &model, &cfg)?;
    let m = similarity_matrix(&corpus.vis, &corpus.txt).map_err(err)?;
    let (hv, ht) = batch_means(&m).map_err(err)?;
    let mv: Vec<f64> = corpus.labels.m.iter().map(|&x| x as f64).collect();
    let mt: Vec<f64> = corpus
        .labels
        .text_m(&corpus.pairs, corpus.txt.n())
        .into_iter()
        .map(|x| x as f64)
        .collect();
    let r = [
        pearson(&uv, &mv).map_err(err)?,
        pearson(&ut, &mt).map_err(err)?,
        pearson(&uv, &hv).map_err(err)?,
        pearson(&ut, &ht).map_err(err)?,
    ];
    let line = format!(
        "pcc(u,m) v {:.3} t {:.3}; pcc(u,h) v {:.3} t {:.3}",
        r[0], r[1], r[2], r[3]
    );
    ensure(r[0] >= 0.6 && r[1] >= 0.6 && r[2] >= 0.7 && r[3] >= 0.7, || line.clone())?;
    Ok(line)
}

fn removal_superiority() -> Verdict {
    const FRACTIONS: [f64; 4] = [0.05, 0.10, 0.20, 0.30];
    let mut gaps = [[0.0; 2]; 4];
    for seed in SEEDS {
        let corpus = generate_corpus(&SyntheticSpec::ambiguous(seed)).map_err(err)?;
        let cfg = accept_config(seed, 1.0);
        let model = train_on(&corpus, &cfg)?;
        let (uv, ut) = scores(&corpus.vis, &corpus.txt, &model, &cfg)?;
        let m = similarity_matrix(&corpus.vis, &corpus.txt).map_err(err)?;
        let total = corpus.pairs.len();
        let counts: Vec<usize> = FRACTIONS
            .iter()
            .map(|f| (f * total as f64).round() as usize)
            .collect();
        let curve = |mode| {
            removal_curve(&m, &uv, &ut, &corpus.pairs, &counts, mode, RemovalSide::Gallery, seed)
                .map_err(err)
        };
        let unc = curve(RemovalMode::Uncertainty)?;
        let rnd = curve(RemovalMode::Random)?;
        for (i, (a, b)) in unc.points.iter().zip(&rnd.points).enumerate() {
            gaps[i][0] += (a.r1_t2v - b.r1_t2v) / SEEDS.len() as f64;
            gaps[i][1] += (a.r1_v2t - b.r1_v2t) / SEEDS.len() as f64;
        }
    }
    let line = FRACTIONS
        .iter()
        .zip(&gaps)
        .map(|(f, g)| format!("{:.0}%: {:+.2}/{:+.2}", f * 100.0, g[0], g[1]))
        .collect::<Vec<_>>()
        .join(", ");
    let all_nonneg = gaps.iter().all(|g| g[0] >= 0.0 && g[1] >= 0.0);
    let positive = gaps.iter().filter(|g| g[0] > 0.0 && g[1] > 0.0).count();
    ensure(all_nonneg && positive >= 2, || format!("gaps t2v/v2t {line}"))?;
    Ok(format!("gaps t2v/v2t {line}"))
}

fn rerank_non_degradation() -> Verdict {
    let mut before = 0.0;
    let mut after = 0.0;
    for seed in SEEDS {
        let corpus = generate_corpus(&SyntheticSpec::ambiguous(seed)).map_err(err)?;
        let cfg = accept_config(seed, 1.0);
        let model = train_on(&corpus, &cfg)?;
        let (uv, ut) = scores(&corpus.vis, &corpus.txt, &model, &cfg)?;
        let m = similarity_matrix(&corpus.vis, &corpus.txt).map_err(err)?;
        let problem = RerankProblem::new(m, uv, ut, corpus.pairs.clone()).map_err(err)?;
        let (val, test) = problem.split(0.5, seed).map_err(err)?;
        let params = val.fit(&default_grid()).map_err(err)?;
        before += test.mean_r1(&RerankParams::default()).map_err(err)? / SEEDS.len() as f64;
        after += test.mean_r1(&params).map_err(err)? / SEEDS.len() as f64;
    }
    let line = format!("held-out mean R@1 {before:.2} -> {after:.2}");
    ensure(after >= before, || line.clone())?;
    Ok(line)
}

fn diversity_effect() -> Verdict {
    let corpus = generate_corpus(&SyntheticSpec::default()).map_err(err)?;
    let with = train_on(&corpus, &accept_config(7, 1.0))?;
    let without = train_on(&corpus, &accept_config(7, 0.0))?;
    let k = with.bank_v.k() as f64;
    let mut parts = Vec::new();
    for (bw, bo) in [(&with.bank_v, &without.bank_v), (&with.bank_t, &without.bank_t)] {
        let cw = bw.max_off_diagonal_cosine().map_err(err)?;
        let co = bo.max_off_diagonal_cosine().map_err(err)?;
        let ld = loss_div(bw).map_err(err)?;
        let line = format!(
            "{}: max|cos| {cw:.3} vs {co:.3}, loss_div {ld:.4} (bound {:.4})",
            bw.modality(),
            1.0 / k
        );
        ensure(cw < 0.2 && (ld - 1.0 / k).abs() <= 0.05 && co > cw, || line.clone())?;
        parts.push(line);
    }
    Ok(parts.join("; "))
}

fn softmax_contrast() -> Verdict {
    let hi = [0.8; 4];
    let lo = [0.2; 4];
    let eh = entropy(&softmax(&hi)).map_err(err)?;
    let el = entropy(&softmax(&lo)).map_err(err)?;
    ensure((eh - el).abs() <= 1e-12, || format!("entropies {eh} vs {el}"))?;

    let cfg = EvidenceConfig::default();
    let direct = (uncertainty_from_similarities(&hi, &cfg), uncertainty_from_similarities(&lo, &cfg));
    // prototypes c*w + sqrt(1-c^2)*e_k all sit at cosine c from w
    let bank = |c: f64| -> Result<PrototypeBank, String> {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|k| {
                let mut r = vec![0.0; 5];
                r[0] = c;
                r[k + 1] = (1.0 - c * c).sqrt();
                r
            })
            .collect();
        PrototypeBank::new(Modality::Text, Matrix::from_rows(&rows)).map_err(err)
    };
    let inst = EmbeddingSet::from_rows(Modality::Vision, &[vec![1.0, 0.0, 0.0, 0.0, 0.0]])
        .map_err(err)?;
    let uh = uncertainty_scores(&inst, &bank(0.8)?, &cfg).map_err(err)?[0];
    let ul = uncertainty_scores(&inst, &bank(0.2)?, &cfg).map_err(err)?[0];
    ensure(direct.0 > direct.1 && uh > ul && (uh - direct.0).abs() < 1e-12, || {
        format!("u {uh} vs {ul}")
    })?;
    Ok(format!("entropy {eh:.6} both; u {uh:.6} > {ul:.6}"))
}

fn random_many_to_many(rng: &mut ChaCha8Rng, n: usize) -> PairSet {
    let mut set = std::collections::BTreeSet::new();
    for t in 0..n {
        set.insert((rng.random_range(0..n), t));
    }
    for v in 0..n {
        set.insert((v, rng.random_range(0..n)));
    }
    for _ in 0..rng.random_range(0..n) {
        set.insert((rng.random_range(0..n), rng.random_range(0..n)));
    }
    PairSet::new(set.into_iter().collect()).expect("set has no duplicates")
}

/// Full sort per query, (score desc, index asc); rank of the first positive.
fn oracle_ranks(m: &SimilarityMatrix, pairs: &PairSet, direction: Direction) -> Vec<usize> {
    let (nq, ng) = match direction {
        Direction::T2V => (m.cols(), m.rows()),
        Direction::V2T => (m.rows(), m.cols()),
    };
    (0..nq)
        .map(|q| {
            let score = |g: usize| match direction {
                Direction::T2V => m.get(g, q),
                Direction::V2T => m.get(q, g),
            };
            let positive = |g: usize| match direction {
                Direction::T2V => pairs.iter().any(|&p| p == (g, q)),
                Direction::V2T => pairs.iter().any(|&p| p == (q, g)),
            };
            let mut order: Vec<usize> = (0..ng).collect();
            order.sort_by(|&a, &b| {
                score(b)
                    .partial_cmp(&score(a))
                    .expect("finite scores")
                    .then(a.cmp(&b))
            });
            1 + order.iter().position(|&g| positive(g)).expect("every query has a positive")
        })
        .collect()
}

fn oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..50 {
        let n = 20;
        let levels = if case % 2 == 0 { 5.0 } else { 1e6 };
        let data: Vec<f64> = (0..n * n)
            .map(|_| (rng.random_range(-1.0..1.0f64) * levels).round() / levels)
            .collect();
        let m = SimilarityMatrix::from_matrix(Matrix::from_vec(n, n, data));
        let pairs = random_many_to_many(&mut rng, n);
        for direction in Direction::BOTH {
            let mut expected = oracle_ranks(&m, &pairs, direction);
            let got = query_ranks(&m, &pairs, direction).map_err(err)?;
            ensure(got == expected, || format!("case {case} {direction}: ranks differ"))?;
            let report = evaluate_retrieval(&m, &pairs, direction).map_err(err)?;
            let nq = expected.len() as f64;
            let recall = |k| 100.0 * expected.iter().filter(|&&r| r <= k).count() as f64 / nq;
            let mnr = expected.iter().sum::<usize>() as f64 / nq;
            let (r1, r5, r10) = (recall(1), recall(5), recall(10));
            expected.sort_unstable();
            let mdr = expected[(expected.len() - 1) / 2] as f64;
            ensure(
                report.r1 == r1
                    && report.r5 == r5
                    && report.r10 == r10
                    && report.mdr == mdr
                    && report.mnr == mnr,
                || format!("case {case} {direction}: {report:?}"),
            )?;
        }
    }
    Ok("50 matrices x 2 directions identical".into())
}

fn determinism_and_round_trips() -> Verdict {
    let spec = SyntheticSpec {
        n_items: 300,
        ..SyntheticSpec::default()
    };
    let corpus = generate_corpus(&spec).map_err(err)?;
    let again = generate_corpus(&spec).map_err(err)?;
    ensure(
        encode_embeddings(&corpus.vis) == encode_embeddings(&again.vis)
            && encode_embeddings(&corpus.txt) == encode_embeddings(&again.txt),
        || "corpus generation is not deterministic".into(),
    )?;
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 64,
        seed: 99,
        ..TrainConfig::default()
    };
    let ckpt = |model: TrainOutcome| -> Result<Vec<u8>, String> {
        encode_checkpoint(&Checkpoint {
            bank_v: model.bank_v,
            bank_t: model.bank_t,
            evidence: cfg.evidence,
            rerank: RerankParams::new(0.75, 2.5).map_err(err)?,
            meta: [("seed".to_string(), "99".to_string())].into(),
        })
        .map_err(err)
    };
    let a = ckpt(train_on(&corpus, &cfg)?)?;
    let b = ckpt(train_on(&corpus, &cfg)?)?;
    ensure(a == b, || "checkpoints differ between identical runs".into())?;
    let back = encode_checkpoint(&decode_checkpoint(&a).map_err(err)?).map_err(err)?;
    ensure(back == a, || "checkpoint round trip changed bytes".into())?;

    for set in [&corpus.vis, &corpus.txt] {
        let bytes = encode_embeddings(set);
        let decoded = decode_embeddings(&bytes).map_err(err)?;
        ensure(encode_embeddings(&decoded) == bytes, || "embedding round trip changed bytes".into())?;
        let exact = set
            .vectors()
            .as_slice()
            .iter()
            .zip(decoded.vectors().as_slice())
            .all(|(x, y)| (*x as f32).to_bits() == (*y as f32).to_bits());
        ensure(exact, || "decoded embeddings differ from stored values".into())?;
    }
    let text = encode_pairs(&corpus.pairs);
    let pairs = parse_pairs(&text).map_err(err)?;
    ensure(pairs == corpus.pairs && encode_pairs(&pairs) == text, || {
        "pairs round trip changed content".into()
    })?;
    Ok(format!("checkpoint {} bytes identical; embeddings and pairs bit-exact", a.len()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "dirichlet invariants", budget: Duration::from_secs(1), run: dirichlet_invariants },
        Criterion { id: 2, name: "gradient check", budget: Duration::from_secs(5), run: gradient_check },
        Criterion { id: 3, name: "entropy/jsd theorems", budget: Duration::from_secs(1), run: entropy_theorems },
        Criterion { id: 4, name: "msvd collision probability", budget: Duration::from_millis(1), run: msvd_probability },
        Criterion { id: 5, name: "uncertainty-ambiguity correlation", budget: Duration::from_secs(120), run: uncertainty_correlation },
        Criterion { id: 6, name: "removal superiority", budget: Duration::from_secs(300), run: removal_superiority },
        Criterion { id: 7, name: "re-ranking non-degradation", budget: Duration::from_secs(120), run: rerank_non_degradation },
        Criterion { id: 8, name: "diversity effect", budget: Duration::from_secs(180), run: diversity_effect },
        Criterion { id: 9, name: "softmax contrast", budget: Duration::from_millis(1), run: softmax_contrast },
        Criterion { id: 10, name: "oracle equivalence", budget: Duration::from_secs(1), run: oracle_equivalence },
        Criterion { id: 11, name: "determinism and round trips", budget: Duration::from_secs(10), run: determinism_and_round_trips },
    ];
    let filter: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget {:?}", c.budget)),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {:<34} {} ({:.3}s) {detail}",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
