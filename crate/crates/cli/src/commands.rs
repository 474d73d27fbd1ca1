use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use geoprior::dataio::{
    generate_longtailed, load_features, write_binary, write_csv, BasisSharing, FeatureSet, Format, SynthConfig,
    SyntheticData,
};
use geoprior::fur::{augment_dataset, HeadDonors, Weighting};
use geoprior::geometry::{
    alignment_matrix, class_geometries, class_similarity_from_logits, most_similar_head, pca_project,
    top_k_eigenvalue_ratio, GeometryBasis, HeadTailSplit, ScoreMode,
};
use geoprior::model::Model;
use geoprior::pipeline::{run_three_stage, validate_phenomena, PipelineConfig};
use geoprior::randvec::{
    angle_cdf, angle_pdf, inner_product_cdf, inner_product_pdf, inner_product_tail_probability, ks_distance,
    mc_validate_pdf, mean_abs_inner_product, sample_inner_products, sphere_surface_area,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::FileConfig;
use crate::output::{labeled_matrix_csv, OutDir};
use crate::{
    AnalyzeArgs, AugmentArgs, Cli, Command, DataArgs, Failure, PhenomenaArgs, ProjectArgs, RandvecArgs,
    SimilarityArgs, SynthArgs, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = file.seed(cli.seed)?;
    match &cli.command {
        Command::Synth(a) => synth(a, &file, seed, &cli.out),
        Command::Analyze(a) => analyze(a, seed, &cli.out),
        Command::Similarity(a) => similarity(a, &file, seed, &cli.out),
        Command::Randvec(a) => randvec(a, seed, &cli.out),
        Command::Augment(a) => augment(a, &file, seed, &cli.out),
        Command::Train(a) => train(a, &file, seed, &cli.out),
        Command::Phenomena(a) => phenomena(a, &file, seed, &cli.out),
        Command::Project(a) => project(a, seed, &cli.out),
    }
}

fn load(path: &Path) -> Result<FeatureSet<f64>, Failure> {
    load_features(path, Format::from_path(path)).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model<f64>, Failure> {
    let f = File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Model::load_checkpoint(&mut BufReader::new(f)).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn embed_with(set: FeatureSet<f64>, model: Option<&PathBuf>) -> Result<FeatureSet<f64>, Failure> {
    match model {
        None => Ok(set),
        Some(p) => {
            let m = load_model(p)?;
            Ok(set.with_features(m.embed(&set.to_matrix()?)?)?)
        }
    }
}

fn csv_string(set: &FeatureSet<f64>, provenance: Option<&[String]>) -> String {
    let mut buf = Vec::new();
    write_csv(set, &mut buf, provenance).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

fn synth_config(args: Option<&SynthArgs>, file: &FileConfig, seed: u64) -> Result<SynthConfig, Failure> {
    let mut cfg = file.synth()?;
    if let Some(a) = args {
        if let Some(v) = a.classes {
            cfg.classes = v;
        }
        if let Some(v) = a.dim {
            cfg.dim = v;
        }
        if let Some(v) = a.imbalance_factor {
            cfg.imbalance_factor = v;
        }
        if let Some(v) = a.max_count {
            cfg.max_count = v;
        }
        if let Some(v) = a.test_per_class {
            cfg.test_per_class = v;
        }
        if let Some(v) = a.separation {
            cfg.separation = v;
        }
        if let Some(s) = &a.sharing {
            cfg.basis_sharing = match s.as_str() {
                "paired" => BasisSharing::Paired,
                "independent" => BasisSharing::Independent,
                other => return Err(Failure::Config(format!("unknown sharing `{other}`"))),
            };
        }
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Generated data rounded to single precision, as it will be stored.
fn synthesize(cfg: &SynthConfig) -> Result<SyntheticData, Failure> {
    let mut data = generate_longtailed(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    data.train = data.train.cast::<f32>().cast();
    data.test = data.test.cast::<f32>().cast();
    Ok(data)
}

fn synth(a: &SynthArgs, file: &FileConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let cfg = synth_config(Some(a), file, seed)?;
    let data = synthesize(&cfg)?;
    let dir = OutDir::create(out, "synth", seed, serde_json::to_value(&cfg).expect("config serializes"))?;
    for (name, set) in [("train", &data.train), ("test", &data.test)] {
        dir.write_csv(&format!("{name}.csv"), &csv_string(set, None))?;
        let mut bin = Vec::new();
        write_binary(set, &mut bin)?;
        std::fs::write(dir.path(format!("{name}.bin")), bin)?;
    }
    dir.write_json("truth.json", &json!({ "ground_truth": data.truth }))?;
    Ok(())
}

/// Training set (and test set when needed) from files or the synthetic config.
struct Data {
    train: FeatureSet<f64>,
    test: Option<FeatureSet<f64>>,
    source: serde_json::Value,
    synth: Option<SynthConfig>,
}

fn data(a: &DataArgs, file: &FileConfig, seed: u64, need_test: bool) -> Result<Data, Failure> {
    match &a.train {
        Some(tp) => {
            let test = match &a.test {
                Some(p) => Some(load(p)?),
                None if need_test => return Err(Failure::Config("--train needs --test".into())),
                None => None,
            };
            Ok(Data {
                train: load(tp)?,
                test,
                source: json!({"train": tp, "test": a.test}),
                synth: None,
            })
        }
        None => {
            let cfg = synth_config(None, file, seed)?;
            let d = synthesize(&cfg)?;
            Ok(Data { train: d.train, test: Some(d.test), source: json!({"synth": cfg}), synth: Some(cfg) })
        }
    }
}

fn analyze(a: &AnalyzeArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    let set = embed_with(load(&a.input)?, a.model.as_ref())?;
    if a.top == 0 || a.top > set.dim() {
        return Err(Failure::Config(format!("--top must be in 1..={}", set.dim())));
    }
    let mut pairs = Vec::new();
    for p in &a.pairs {
        pairs.push(parse_pair(p)?);
    }
    let cfg = json!({"input": a.input, "model": a.model, "top": a.top, "centered": a.centered, "pairs": a.pairs});
    let dir = OutDir::create(out, "analyze", seed, cfg)?;
    let geoms = class_geometries(&set, a.centered)?;
    let labels: Vec<u32> = geoms.iter().map(GeometryBasis::class_id).collect();

    let mut eig = String::from("class,index,eigenvalue\n");
    let mut spectral = format!("class,samples,top{}_ratio,isotropic_control\n", a.top);
    let mut ratios = BTreeMap::new();
    let control = a.top as f64 / set.dim() as f64;
    for g in &geoms {
        for (i, v) in g.values().iter().enumerate() {
            eig.push_str(&format!("{},{i},{v}\n", g.class_id()));
        }
        let r = top_k_eigenvalue_ratio(g, a.top).ok();
        ratios.insert(g.class_id(), r);
        let shown = r.map_or(String::new(), |r| r.to_string());
        spectral.push_str(&format!("{},{},{shown},{control}\n", g.class_id(), g.sample_count()));
    }
    dir.write_csv("eigenvalues.csv", &eig)?;
    dir.write_csv("spectral.csv", &spectral)?;

    let sim = geoprior::geometry::similarity_matrix(&geoms, a.top)?;
    dir.write_csv("similarity.csv", &labeled_matrix_csv(&labels, |i, j| sim.get(i, j)))?;

    let mut diag = BTreeMap::new();
    for (ca, cb) in pairs {
        let find = |c: u32| geoms.iter().find(|g| g.class_id() == c).ok_or(geoprior::Error::UnknownClass(c));
        let m = alignment_matrix(find(ca)?, find(cb)?)?;
        let idx: Vec<u32> = (0..m.dim() as u32).collect();
        dir.write_csv(&format!("alignment_{ca}_{cb}.csv"), &labeled_matrix_csv(&idx, |i, j| m.get(i, j)))?;
        diag.insert(format!("{ca}:{cb}"), m.diagonal_mass(a.top));
    }
    let sim_rows: Vec<Vec<f64>> = (0..labels.len()).map(|i| sim.row(i).to_vec()).collect();
    dir.write_json(
        "analyze.json",
        &json!({
            "classes": labels,
            "top_ratio": ratios,
            "isotropic_control": control,
            "similarity": sim_rows,
            "alignment_diagonal_mass": diag,
        }),
    )
}

fn parse_pair(s: &str) -> Result<(u32, u32), Failure> {
    let bad = || Failure::Config(format!("expected `a:b`, found `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn score_mode(s: Option<&str>, default: ScoreMode) -> Result<ScoreMode, Failure> {
    match s {
        None => Ok(default),
        Some("probabilities") => Ok(ScoreMode::Probabilities),
        Some("logits") => Ok(ScoreMode::Logits),
        Some(o) => Err(Failure::Config(format!("unknown score mode `{o}`"))),
    }
}

/// Phase-1-only configuration of `cfg`.
fn erm_config(mut cfg: PipelineConfig) -> PipelineConfig {
    cfg.train.m2 = 0;
    cfg.train.m3 = 0;
    cfg.train.fourth_phase = false;
    cfg
}

fn similarity(a: &SimilarityArgs, file: &FileConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let mut pcfg = file.pipeline()?.with_seed(seed);
    pcfg.score_mode = score_mode(a.mode.as_deref(), pcfg.score_mode)?;
    if let Some(m) = a.min_count {
        pcfg.split = HeadTailSplit::Threshold { min_count: m };
    }
    let d = data(&a.data, file, seed, false)?;
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => run_three_stage(&d.train, &d.train, &erm_config(pcfg.clone()))?.model,
    };
    let cfg = json!({"data": d.source, "model": a.model, "pipeline": pcfg});
    let dir = OutDir::create(out, "similarity", seed, cfg)?;
    let logits = model.logits_from_features(&model.embed(&d.train.to_matrix()?)?)?;
    let table = class_similarity_from_logits(&logits, d.train.labels(), pcfg.score_mode)?;

    let mut csv = String::from("class,rank,other,score\n");
    for c in 0..table.num_classes() as u32 {
        for (r, (k, s)) in table.ranking(c)?.iter().enumerate() {
            csv.push_str(&format!("{c},{r},{k},{s}\n"));
        }
    }
    dir.write_csv("similarity_table.csv", &csv)?;

    let mut heads = BTreeMap::new();
    let split = pcfg.split.split(&d.train.class_counts());
    if let Ok((head, tail)) = &split {
        for &t in tail {
            heads.insert(t, most_similar_head(t, &table, head)?);
        }
    }
    dir.write_json(
        "similarity.json",
        &json!({
            "table": table,
            "split": split.as_ref().ok().map(|(h, t)| json!({"head": h, "tail": t})),
            "most_similar_head": heads,
        }),
    )
}

fn randvec(a: &RandvecArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    if a.grid < 2 {
        return Err(Failure::Config("--grid must be at least 2".into()));
    }
    if a.dim < 2 {
        return Err(Failure::Config("--dim must be at least 2".into()));
    }
    let dir = OutDir::create(out, "randvec", seed, serde_json::to_value(json!({
        "dim": a.dim, "grid": a.grid, "draws": a.draws, "bins": a.bins
    })).expect("json"))?;
    let p = a.dim;
    let mut pdf = String::from("x,analytic,cdf\n");
    let mut angle = String::from("theta,analytic,cdf\n");
    for i in 0..a.grid {
        let t = i as f64 / (a.grid - 1) as f64;
        let x = -1.0 + 2.0 * t;
        pdf.push_str(&format!("{x},{},{}\n", inner_product_pdf(p, x)?, inner_product_cdf(p, x)?));
        let th = std::f64::consts::PI * t;
        angle.push_str(&format!("{th},{},{}\n", angle_pdf(p, th)?, angle_cdf(p, th)?));
    }
    dir.write_csv("pdf.csv", &pdf)?;
    dir.write_csv("angle.csv", &angle)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hist = mc_validate_pdf(p, a.draws, a.bins, &mut rng)?;
    let mut h = String::from("x,analytic,empirical,analytic_midpoint\n");
    for b in &hist.bins {
        h.push_str(&format!("{},{},{},{}\n", b.midpoint(), b.analytic, b.empirical, b.analytic_midpoint));
    }
    dir.write_csv("histogram.csv", &h)?;
    let samples = sample_inner_products(p, a.draws, &mut rng);
    let ks = ks_distance(&samples, |d| inner_product_cdf(p, d).unwrap_or(f64::NAN));
    dir.write_json(
        "randvec.json",
        &json!({
            "sphere_surface_area": sphere_surface_area(p)?,
            "mean_abs_inner_product": mean_abs_inner_product(p)?,
            "probability_abs_below_0_3": 1.0 - inner_product_tail_probability(p, 0.3)?,
            "histogram_max_abs_deviation": hist.max_abs_deviation,
            "histogram_max_midpoint_deviation": hist.max_midpoint_deviation,
            "ks_distance": ks,
        }),
    )
}

/// Each tail class goes to the head class whose feature mean has the highest
/// cosine similarity with its own (lower index on ties).
fn mean_cosine_matching(set: &FeatureSet<f64>, head: &[u32], tail: &[u32]) -> BTreeMap<u32, u32> {
    let mean = |c: u32| -> Vec<f64> {
        let rows = set.rows_of(c);
        let n = rows.len().max(1) as f64;
        (0..set.dim()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect()
    };
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let n = a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 { d / n } else { 0.0 }
    };
    let heads: Vec<(u32, Vec<f64>)> = head.iter().map(|&h| (h, mean(h))).collect();
    tail.iter()
        .map(|&t| {
            let mt = mean(t);
            let mut best = (heads[0].0, f64::NEG_INFINITY);
            for (h, mh) in &heads {
                let s = cos(&mt, mh);
                if s > best.1 {
                    best = (*h, s);
                }
            }
            (t, best.0)
        })
        .collect()
}

fn augment(a: &AugmentArgs, file: &FileConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let set = load(&a.input)?;
    let mut cfg = file.fur()?;
    if let Some(v) = a.na {
        cfg.n_a = v;
    }
    if let Some(v) = a.scale {
        cfg.scale = v;
    }
    if a.k_top.is_some() {
        cfg.k_top = a.k_top;
    }
    if let Some(w) = &a.weighting {
        cfg.weighting = match w.as_str() {
            "eigenvalue" => Weighting::Eigenvalue,
            "sqrt_eigenvalue" => Weighting::SqrtEigenvalue,
            o => return Err(Failure::Config(format!("unknown weighting `{o}`"))),
        };
    }
    cfg.seed = seed;
    cfg.validate(set.dim())?;

    let split = if !a.head.is_empty() {
        HeadTailSplit::Explicit { head: a.head.clone() }
    } else {
        HeadTailSplit::Threshold { min_count: a.min_count.unwrap_or(100) }
    };
    let (head, tail) = split.split(&set.class_counts())?;
    let matching = if a.matches.is_empty() {
        mean_cosine_matching(&set, &head, &tail)
    } else {
        let mut m = BTreeMap::new();
        for s in &a.matches {
            let (t, h) = parse_pair(s)?;
            if !tail.contains(&t) || !head.contains(&h) {
                return Err(Failure::Config(format!("match {t}:{h} must pair a tail class with a head class")));
            }
            m.insert(t, h);
        }
        m
    };
    let mut geometries = BTreeMap::new();
    for &h in matching.values() {
        let g = GeometryBasis::from_rows(h, &set.rows_of(h), set.dim(), !a.uncentered)?;
        geometries.insert(h, g);
    }
    let donors = HeadDonors { matching: matching.clone(), geometries };

    let echo = json!({
        "input": a.input, "output": a.output, "fur": cfg, "split": split,
        "matching": matching, "centered": !a.uncentered,
    });
    let dir = OutDir::create(out, "augment", seed, echo)?;
    let (augmented, prov) = augment_dataset(&set, &tail, &donors, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let tags: Vec<String> = prov.iter().map(ToString::to_string).collect();
    let name = a.output.to_string_lossy().to_string();
    match Format::from_path(&a.output) {
        Format::Csv => dir.write_csv(&name, &csv_string(&augmented, Some(&tags)))?,
        Format::Binary => {
            let mut bin = Vec::new();
            write_binary(&augmented, &mut bin)?;
            std::fs::write(dir.path(&name), bin)?;
            let mut side = String::from("row,provenance\n");
            for (i, t) in tags.iter().enumerate() {
                side.push_str(&format!("{i},{t}\n"));
            }
            dir.write_csv(&format!("{name}.provenance.csv"), &side)?;
        }
    }
    Ok(())
}

fn pipeline_config(a: &TrainArgs, file: &FileConfig, seed: u64) -> Result<PipelineConfig, Failure> {
    let mut cfg = file.pipeline()?.with_seed(seed);
    let t = &mut cfg.train;
    for (dst, src) in [(&mut t.m1, a.m1), (&mut t.m2, a.m2), (&mut t.m3, a.m3)] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    for (dst, src) in [(&mut t.lr1, a.lr1), (&mut t.lr2, a.lr2), (&mut t.lr3, a.lr3)] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    if a.fourth_phase {
        t.fourth_phase = true;
    }
    if a.no_phase3 {
        t.m3 = 0;
    }
    if a.erm {
        cfg = erm_config(cfg);
    }
    if let Some(v) = a.nt {
        cfg.fur.n_t = v;
    }
    if let Some(v) = a.na {
        cfg.fur.n_a = v;
    }
    if let Some(v) = a.scale {
        cfg.fur.scale = v;
    }
    if let Some(m) = a.min_count {
        cfg.split = HeadTailSplit::Threshold { min_count: m };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: &TrainArgs, file: &FileConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let cfg = pipeline_config(a, file, seed)?;
    let d = data(&a.data, file, seed, true)?;
    let test = d.test.as_ref().expect("test set present");
    let run = run_three_stage(&d.train, test, &cfg)?;
    let dir = OutDir::create(out, "train", seed, json!({"data": d.source, "pipeline": cfg}))?;
    dir.write_json("report.json", &run.report)?;
    dir.write_csv("loss.csv", &run.report.loss_csv())?;
    dir.write_csv("accuracy.csv", &run.report.accuracy_csv())?;
    let mut ckpt = Vec::new();
    run.model.save_checkpoint(&mut ckpt)?;
    std::fs::write(dir.path("model.gpmd"), ckpt)?;
    Ok(())
}

fn phenomena(a: &PhenomenaArgs, file: &FileConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let mut pcfg = file.phenomena()?;
    pcfg.seed = seed;
    let d = data(&a.data, file, seed, false)?;
    let balanced = match (&a.balanced, &d.synth) {
        (Some(p), _) => Some(load(p)?),
        (None, Some(s)) => Some(synthesize(&SynthConfig { imbalance_factor: 1.0, ..s.clone() })?.train),
        (None, None) => None,
    };
    let (models, trained_with) = if a.models.is_empty() {
        if a.n_models == 0 {
            return Err(Failure::Config("--n-models must be at least 1".into()));
        }
        let base = erm_config(file.pipeline()?);
        let mut ms = Vec::new();
        for i in 0..a.n_models as u64 {
            let cfg = base.clone().with_seed(seed.wrapping_add(i));
            ms.push(run_three_stage(&d.train, &d.train, &cfg)?.model);
        }
        (ms, Some(base))
    } else {
        (a.models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?, None)
    };
    let report = validate_phenomena(&d.train, balanced.as_ref(), &models, &pcfg)?;
    let echo = json!({
        "data": d.source, "models": a.models, "trained_models": trained_with.as_ref().map(|_| a.n_models),
        "training": trained_with, "balanced": a.balanced, "phenomena": pcfg,
    });
    let dir = OutDir::create(out, "phenomena", seed, echo)?;
    let mut csv = format!("class,top{}_ratio,isotropic_control\n", report.spectral.k);
    for (c, r) in &report.spectral.ratios {
        csv.push_str(&format!("{c},{r},{}\n", report.spectral.isotropic_control));
    }
    dir.write_csv("spectral.csv", &csv)?;
    dir.write_json("phenomena.json", &json!({ "report": report }))
}

fn project(a: &ProjectArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    let set = embed_with(load(&a.input)?, a.model.as_ref())?;
    let (coords, explained) = pca_project(&set)?;
    let dir = OutDir::create(out, "project", seed, json!({"input": a.input, "model": a.model}))?;
    let mut csv = String::from("label,pc1,pc2\n");
    for i in 0..coords.rows() {
        csv.push_str(&format!("{},{},{}\n", set.label(i), coords.get(i, 0), coords.get(i, 1)));
    }
    dir.write_csv("projection.csv", &csv)?;
    dir.write_json("project.json", &json!({"explained_variance": explained, "rows": coords.rows()}))
}
