use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pau::io::{self, Checkpoint};
use pau::rerank::default_grid;
use pau::{
    batch_means, entropy, evaluate_retrieval, generate_corpus, msvd_collision_logprob, pearson,
    removal_curve, similarity_matrix, softmax, train, uncertainty_from_similarities,
    uncertainty_scores, Direction, EmbeddingSet, Modality, PairSet, RemovalMode, RerankParams,
    RerankProblem, RetrievalReport, SimilarityMatrix, SyntheticSpec, TrainConfig,
};
use sha2::{Digest, Sha256};

use crate::cli::{
    AnalyzeCommand, BetaArgs, CurveMode, EntropyDemoArgs, EvaluateArgs, GenSynthArgs, Inputs,
    MsvdArgs, PccArgs, Preset, RemovalArgs, RerankArgs, ScoreArgs, TrainArgs,
};
use crate::report::{fmt2, fmt4, print_table, write_csv, Summary};
use crate::UsageError;

const REPORT_HEADER: [&str; 9] = ["split", "variant", "direction", "r1", "r5", "r10", "mdr", "mnr", "queries"];

fn load_embeddings(path: &Path, modality: Modality) -> Result<EmbeddingSet> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let set = if is_csv {
        io::read_embeddings_csv(path, modality)
    } else {
        io::read_embeddings(path)
    }
    .with_context(|| format!("loading {}", path.display()))?;
    if set.modality() != modality {
        bail!(
            "{} holds {} embeddings, expected {modality}",
            path.display(),
            set.modality()
        );
    }
    Ok(set)
}

struct Corpus {
    vis: EmbeddingSet,
    txt: EmbeddingSet,
    pairs: PairSet,
}

fn load_inputs(inputs: &Inputs) -> Result<Corpus> {
    let vis = load_embeddings(&inputs.vis, Modality::Vision)?;
    let txt = load_embeddings(&inputs.txt, Modality::Text)?;
    let pairs = io::read_pairs(&inputs.pairs)
        .with_context(|| format!("loading {}", inputs.pairs.display()))?;
    pairs
        .validate(vis.n(), txt.n())
        .with_context(|| format!("checking {}", inputs.pairs.display()))?;
    Ok(Corpus { vis, txt, pairs })
}

fn corpus_digest(inputs: &Inputs) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in [&inputs.vis, &inputs.txt, &inputs.pairs] {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn read_ckpt(path: &Path) -> Result<Checkpoint> {
    io::read_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn uncertainties(ckpt: &Checkpoint, vis: &EmbeddingSet, txt: &EmbeddingSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let uv = uncertainty_scores(vis, &ckpt.bank_t, &ckpt.evidence)?;
    let ut = uncertainty_scores(txt, &ckpt.bank_v, &ckpt.evidence)?;
    Ok((uv, ut))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn report_rows(split: &str, variant: &str, m: &SimilarityMatrix, pairs: &PairSet) -> Result<Vec<(RetrievalReport, Vec<String>)>> {
    Direction::BOTH
        .iter()
        .map(|&d| {
            let r = evaluate_retrieval(m, pairs, d)?;
            let row = vec![
                split.to_string(),
                variant.to_string(),
                d.to_string(),
                fmt2(r.r1),
                fmt2(r.r5),
                fmt2(r.r10),
                r.mdr.to_string(),
                fmt2(r.mnr),
                r.n_queries.to_string(),
            ];
            Ok((r, row))
        })
        .collect()
}

fn resolve_betas(args: &BetaArgs, stored: RerankParams) -> Result<RerankParams> {
    Ok(RerankParams::new(
        args.beta1.unwrap_or(stored.beta1),
        args.beta2.unwrap_or(stored.beta2),
    )?)
}

pub fn gen_synth(args: &GenSynthArgs) -> Result<()> {
    let mut spec = match args.preset {
        Preset::Default => SyntheticSpec {
            seed: args.seed,
            ..SyntheticSpec::default()
        },
        Preset::Ambiguous => SyntheticSpec::ambiguous(args.seed),
    };
    if let Some(n) = args.n_items {
        spec.n_items = n;
    }
    if let Some(d) = args.d {
        spec.d = d;
    }
    if let Some(k) = args.k_true {
        spec.k_true = k;
    }
    if let Some(m) = args.m_max {
        if m == 0 {
            return Err(UsageError("--m-max must be at least 1".into()).into());
        }
        spec.ambiguity_weights = SyntheticSpec::uniform_weights(m);
    }
    if let Some(w) = &args.weights {
        spec.ambiguity_weights = w.clone();
    }
    if let Some(s) = args.noise {
        spec.noise_sigma = s;
    }
    if let Some(c) = args.captions {
        spec.captions_per_item = c;
    }
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let corpus = generate_corpus(&spec)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    io::write_embeddings(&corpus.vis, &args.out.join("vis.paue"))?;
    io::write_embeddings(&corpus.txt, &args.out.join("txt.paue"))?;
    io::write_pairs(&corpus.pairs, &args.out.join("pairs.tsv"))?;
    write_csv(
        &args.out.join("labels.csv"),
        &["item", "m", "semantics"],
        corpus.labels.m.iter().zip(&corpus.labels.semantics).enumerate().map(|(i, (m, s))| {
            let sem = s.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            [i.to_string(), m.to_string(), sem]
        }),
    )?;
    Summary::new("gen-synth")
        .kv("items", corpus.vis.n())
        .kv("texts", corpus.txt.n())
        .kv("d", spec.d)
        .kv("k_true", spec.k_true)
        .kv("m_max", spec.m_max())
        .kv("noise", spec.noise_sigma)
        .kv("seed", spec.seed)
        .kv("out", args.out.display())
        .print();
    Ok(())
}

fn history_path(args: &TrainArgs) -> PathBuf {
    args.history.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        args.out.with_file_name(format!("{stem}.history.csv"))
    })
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        k: args.k,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        lambda_div: args.lambda_div,
        seed: args.seed,
        evidence: args.evidence.config(),
        optimizer: args.optimizer,
        target_map: args.target_map,
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let corpus = load_inputs(&args.inputs)?;
    let outcome = train(&corpus.vis, &corpus.txt, &corpus.pairs, &cfg)?;

    let meta: BTreeMap<String, String> = [
        ("seed", cfg.seed.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("k", cfg.k.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("lambda_div", cfg.lambda_div.to_string()),
        ("optimizer", cfg.optimizer.to_string()),
        ("target_map", cfg.target_map.to_string()),
        ("corpus_sha256", corpus_digest(&args.inputs)?),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let ckpt = Checkpoint {
        bank_v: outcome.bank_v,
        bank_t: outcome.bank_t,
        evidence: cfg.evidence,
        rerank: RerankParams::default(),
        meta,
    };
    io::write_checkpoint(&ckpt, &args.out)?;

    let header = ["epoch", "uct_vision", "uct_text", "div_vision", "div_text", "total"];
    let rows: Vec<Vec<String>> = outcome
        .history
        .epochs
        .iter()
        .enumerate()
        .map(|(e, l)| {
            let mut row = vec![(e + 1).to_string()];
            row.extend(
                [l.uct_vision, l.uct_text, l.div_vision, l.div_text, l.total]
                    .iter()
                    .map(f64::to_string),
            );
            row
        })
        .collect();
    let hist = history_path(args);
    write_csv(&hist, &header, &rows)?;

    let shown: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 10 == 0 || *i + 1 == rows.len())
        .map(|(_, r)| {
            let mut out = vec![r[0].clone()];
            out.extend(r[1..].iter().map(|v| fmt4(v.parse().unwrap_or(f64::NAN))));
            out
        })
        .collect();
    print_table(&header, &shown);

    let last = outcome.history.epochs.last().cloned().unwrap_or_default();
    Summary::new("train")
        .kv("epochs", cfg.epochs)
        .kv("k", cfg.k)
        .kv("loss", fmt4(last.total))
        .kv("uct_vision", fmt4(last.uct_vision))
        .kv("uct_text", fmt4(last.uct_text))
        .kv("div_vision", fmt4(last.div_vision))
        .kv("div_text", fmt4(last.div_text))
        .kv("ckpt", args.out.display())
        .kv("history", hist.display())
        .print();
    Ok(())
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let ckpt = read_ckpt(&args.ckpt)?;
    let mut rows: Vec<[String; 3]> = Vec::new();
    let mut summary = Summary::new("score");
    for (path, modality) in [(&args.vis, Modality::Vision), (&args.txt, Modality::Text)] {
        let Some(path) = path else { continue };
        let set = load_embeddings(path, modality)?;
        let bank = match modality {
            Modality::Vision => &ckpt.bank_t,
            Modality::Text => &ckpt.bank_v,
        };
        let u = uncertainty_scores(&set, bank, &ckpt.evidence)?;
        rows.extend(u.iter().enumerate().map(|(i, x)| [modality.to_string(), i.to_string(), x.to_string()]));
        summary = summary
            .kv(&format!("n_{modality}"), u.len())
            .kv(&format!("mean_u_{modality}"), fmt4(mean(&u)));
    }
    write_csv(&args.out, &["modality", "index", "u"], rows)?;
    summary.kv("out", args.out.display()).print();
    Ok(())
}

fn write_matrix(path: &Path, m: &SimilarityMatrix) -> Result<()> {
    let mut header = vec!["vision".to_string()];
    header.extend((0..m.cols()).map(|j| format!("t{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        &header,
        (0..m.rows()).map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(m.row(i).iter().map(f64::to_string));
            row
        }),
    )
}

pub fn rerank(args: &RerankArgs) -> Result<()> {
    let corpus = load_inputs(&args.inputs)?;
    let mut ckpt = read_ckpt(&args.ckpt)?;
    let (uv, ut) = uncertainties(&ckpt, &corpus.vis, &corpus.txt)?;
    let m = similarity_matrix(&corpus.vis, &corpus.txt)?;
    let full = RerankProblem::new(m, uv, ut, corpus.pairs)?;

    let (params, split, judged) = if args.fit_betas {
        let (val, test) = full
            .split(args.val_fraction, args.seed)
            .map_err(|e| UsageError(e.to_string()))?;
        (val.fit(&default_grid())?, "test", test)
    } else {
        (resolve_betas(&args.betas, ckpt.rerank)?, "all", full.clone())
    };

    let mut table = Vec::new();
    let mut r1 = Vec::new();
    for (variant, params) in [("base", RerankParams::default()), ("reranked", params)] {
        for (r, row) in report_rows(split, variant, &judged.apply(&params)?, &judged.pairs)? {
            r1.push(r.r1);
            table.push(row);
        }
    }
    print_table(&REPORT_HEADER, &table);
    if let Some(out) = &args.out {
        write_csv(out, &REPORT_HEADER, &table)?;
    }
    if let Some(path) = &args.matrix_out {
        write_matrix(path, &full.apply(&params)?)?;
    }
    if let Some(path) = &args.save_ckpt {
        ckpt.rerank = params;
        if args.fit_betas {
            ckpt.meta.insert("rerank_val_fraction".into(), args.val_fraction.to_string());
            ckpt.meta.insert("rerank_seed".into(), args.seed.to_string());
        }
        io::write_checkpoint(&ckpt, path)?;
    }
    Summary::new("rerank")
        .kv("beta1", params.beta1)
        .kv("beta2", params.beta2)
        .kv("split", split)
        .kv("t2v_r1_before", fmt2(r1[0]))
        .kv("t2v_r1_after", fmt2(r1[2]))
        .kv("v2t_r1_before", fmt2(r1[1]))
        .kv("v2t_r1_after", fmt2(r1[3]))
        .print();
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.ckpt.is_none() && (args.betas.beta1.is_some() || args.betas.beta2.is_some()) {
        return Err(UsageError("--beta1/--beta2 require --ckpt".into()).into());
    }
    let corpus = load_inputs(&args.inputs)?;
    let m = similarity_matrix(&corpus.vis, &corpus.txt)?;
    let mut table = Vec::new();
    let mut summary = Summary::new("evaluate");
    for (r, row) in report_rows("all", "base", &m, &corpus.pairs)? {
        summary = summary.kv(&format!("{}_r1", r.direction), fmt2(r.r1));
        table.push(row);
    }
    if let Some(path) = &args.ckpt {
        let ckpt = read_ckpt(path)?;
        let params = resolve_betas(&args.betas, ckpt.rerank)?;
        let (uv, ut) = uncertainties(&ckpt, &corpus.vis, &corpus.txt)?;
        let problem = RerankProblem::new(m, uv, ut, corpus.pairs)?;
        for (r, row) in report_rows("all", "reranked", &problem.apply(&params)?, &problem.pairs)? {
            summary = summary.kv(&format!("reranked_{}_r1", r.direction), fmt2(r.r1));
            table.push(row);
        }
    }
    print_table(&REPORT_HEADER, &table);
    if let Some(out) = &args.out {
        write_csv(out, &REPORT_HEADER, &table)?;
    }
    summary.print();
    Ok(())
}

fn read_labels(path: &Path, n_vis: usize) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut m = vec![f64::NAN; n_vis];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> Result<usize> {
            record
                .get(i)
                .and_then(|s| s.trim().parse().ok())
                .with_context(|| format!("{}: bad record on line {}", path.display(), line + 2))
        };
        let (item, count) = (field(0)?, field(1)?);
        if item >= n_vis {
            bail!("{}: item {item} out of range for {n_vis} vision items", path.display());
        }
        m[item] = count as f64;
    }
    if let Some(i) = m.iter().position(|x| x.is_nan()) {
        bail!("{}: no label for vision item {i}", path.display());
    }
    Ok(m)
}

pub fn pcc(args: &PccArgs) -> Result<()> {
    let ckpt = read_ckpt(&args.ckpt)?;
    let vis = load_embeddings(&args.vis, Modality::Vision)?;
    let txt = load_embeddings(&args.txt, Modality::Text)?;
    let (uv, ut) = uncertainties(&ckpt, &vis, &txt)?;
    let (hv, ht) = batch_means(&similarity_matrix(&vis, &txt)?)?;
    let mut rows = vec![
        ("vision", "h", pearson(&uv, &hv)?),
        ("text", "h", pearson(&ut, &ht)?),
    ];
    if let (Some(labels), Some(pairs)) = (&args.labels, &args.pairs) {
        let pairs = io::read_pairs(pairs)?;
        pairs.validate(vis.n(), txt.n())?;
        let mv = read_labels(labels, vis.n())?;
        let mt: Vec<f64> = pairs
            .visions_by_text(txt.n())
            .iter()
            .map(|vs| mean(&vs.iter().map(|&v| mv[v]).collect::<Vec<_>>()))
            .collect();
        rows.push(("vision", "m", pearson(&uv, &mv)?));
        rows.push(("text", "m", pearson(&ut, &mt)?));
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(a, b, r)| vec![a.to_string(), b.to_string(), fmt4(*r)])
        .collect();
    print_table(&["modality", "against", "pcc"], &table);
    if let Some(out) = &args.out {
        write_csv(out, &["modality", "against", "pcc"], rows.iter().map(|(a, b, r)| [a.to_string(), b.to_string(), r.to_string()]))?;
    }
    let mut summary = Summary::new("pcc");
    for (modality, against, r) in &rows {
        summary = summary.kv(&format!("{modality}_{against}"), fmt4(*r));
    }
    summary.print();
    Ok(())
}

pub fn removal(args: &RemovalArgs) -> Result<()> {
    if let Some(f) = args.fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(UsageError(format!("removal fraction {f} is not in (0, 1)")).into());
    }
    let corpus = load_inputs(&args.inputs)?;
    let ckpt = read_ckpt(&args.ckpt)?;
    let (uv, ut) = uncertainties(&ckpt, &corpus.vis, &corpus.txt)?;
    let m = similarity_matrix(&corpus.vis, &corpus.txt)?;
    let total = corpus.pairs.len();
    let counts: Vec<usize> = args
        .fractions
        .iter()
        .map(|f| (f * total as f64).round() as usize)
        .collect();
    let modes: &[RemovalMode] = match args.mode {
        CurveMode::Uncertainty => &[RemovalMode::Uncertainty],
        CurveMode::Random => &[RemovalMode::Random],
        CurveMode::Both => &[RemovalMode::Uncertainty, RemovalMode::Random],
    };
    let header = ["mode", "removed", "pairs_remaining", "r1_t2v", "r1_v2t"];
    let mut table = Vec::new();
    let mut csv_rows = Vec::new();
    let mut curves = Vec::new();
    for &mode in modes {
        let curve = removal_curve(&m, &uv, &ut, &corpus.pairs, &counts, mode, args.side.into(), args.seed)?;
        for p in &curve.points {
            let head = [mode.to_string(), p.removed.to_string(), p.pairs_remaining.to_string()];
            table.push(head.iter().cloned().chain([fmt2(p.r1_t2v), fmt2(p.r1_v2t)]).collect::<Vec<_>>());
            csv_rows.push(head.into_iter().chain([p.r1_t2v.to_string(), p.r1_v2t.to_string()]).collect::<Vec<_>>());
        }
        curves.push(curve);
    }
    print_table(&header, &table);
    if let Some(out) = &args.out {
        write_csv(out, &header, &csv_rows)?;
    }
    let mut summary = Summary::new("removal-curve").kv("pairs", total).kv("points", counts.len());
    if let [unc, rnd] = curves.as_slice() {
        let gaps = |f: fn(&pau::metrics::RemovalPoint) -> f64| {
            mean(&unc.points.iter().zip(&rnd.points).map(|(a, b)| f(a) - f(b)).collect::<Vec<_>>())
        };
        summary = summary
            .kv("mean_gap_t2v", fmt2(gaps(|p| p.r1_t2v)))
            .kv("mean_gap_v2t", fmt2(gaps(|p| p.r1_v2t)));
    } else if let Some(last) = curves[0].points.last() {
        summary = summary.kv("last_r1_t2v", fmt2(last.r1_t2v)).kv("last_r1_v2t", fmt2(last.r1_v2t));
    }
    summary.print();
    Ok(())
}

pub fn entropy_demo(args: &EntropyDemoArgs) -> Result<()> {
    if args.k == 0 {
        return Err(UsageError("--k must be at least 1".into()).into());
    }
    let cfg = args.evidence.config();
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let mut rows = Vec::new();
    for s in [args.high, args.low] {
        if !(-1.0..=1.0).contains(&s) {
            return Err(UsageError(format!("similarity {s} is not in [-1, 1]")).into());
        }
        let p = vec![s; args.k];
        rows.push((s, entropy(&softmax(&p))?, uncertainty_from_similarities(&p, &cfg)));
    }
    let header = ["similarity", "softmax_entropy", "u"];
    print_table(
        &header,
        &rows.iter().map(|(s, h, u)| vec![s.to_string(), format!("{h:.6}"), format!("{u:.6}")]).collect::<Vec<_>>(),
    );
    if let Some(out) = &args.out {
        write_csv(out, &header, rows.iter().map(|(s, h, u)| [s.to_string(), h.to_string(), u.to_string()]))?;
    }
    Summary::new("entropy-demo")
        .kv("k", args.k)
        .kv("evidence", cfg.kind)
        .kv("entropy_high", format!("{:.6}", rows[0].1))
        .kv("entropy_low", format!("{:.6}", rows[1].1))
        .kv("u_high", format!("{:.6}", rows[0].2))
        .kv("u_low", format!("{:.6}", rows[1].2))
        .print();
    Ok(())
}

pub fn msvd(args: &MsvdArgs) -> Result<()> {
    let lp = msvd_collision_logprob(args.n, args.batch, args.group).map_err(|e| UsageError(e.to_string()))?;
    Summary::new("msvd-prob")
        .kv("n", args.n)
        .kv("batch", args.batch)
        .kv("group", args.group)
        .kv("log_p", format!("{lp:.4}"))
        .kv("p", format!("{:.4e}", lp.exp()))
        .print();
    Ok(())
}

pub fn analyze(cmd: &AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Pcc(a) => pcc(a),
        AnalyzeCommand::RemovalCurve(a) => removal(a),
        AnalyzeCommand::EntropyDemo(a) => entropy_demo(a),
        AnalyzeCommand::MsvdProb(a) => msvd(a),
    }
}
