//! Standard synthetic long-tailed benchmark over five seeds.
//!
//! Usage: `cargo run --release --example benchmark [-- '<json pipeline overrides>' ['<json synth overrides>']]`

use geoprior::dataio::{generate_longtailed, SynthConfig};
use geoprior::pipeline::{run_three_stage, PipelineConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut pcfg = serde_json::to_value(PipelineConfig::default()).unwrap();
    let mut scfg = serde_json::to_value(SynthConfig::default()).unwrap();
    if let Some(a) = args.first() {
        merge(&mut pcfg, serde_json::from_str(a).expect("pipeline overrides"));
    }
    if let Some(a) = args.get(1) {
        merge(&mut scfg, serde_json::from_str(a).expect("synth overrides"));
    }
    let pcfg: PipelineConfig = serde_json::from_value(pcfg).unwrap();
    let scfg: SynthConfig = serde_json::from_value(scfg).unwrap();

    println!("seed  erm_tail dec_tail fur_tail | erm_all dec_all fur_all");
    let (mut gap, mut ord_td, mut ord_de, mut ord_ov) = (0.0, 0, 0, 0);
    for seed in 0..5u64 {
        let data = generate_longtailed(&SynthConfig { seed, ..scfg.clone() }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let out = run_three_stage(&data.train, &data.test, &pcfg.clone().with_seed(seed)).unwrap();
        let r = &out.report;
        let get = |n: &str| r.phase(n).unwrap();
        let (e, d, f) = (get("phase1"), get("phase2"), get("phase3"));
        let t = |x: &geoprior::pipeline::Evaluation| x.split_tail.unwrap();
        println!(
            "{seed:4}  {:.3}    {:.3}    {:.3}    | {:.3}   {:.3}   {:.3}",
            t(e), t(d), t(f), e.accuracy.overall, d.accuracy.overall, f.accuracy.overall
        );
        gap += t(f) - t(e);
        ord_td += (t(f) >= t(d)) as u32;
        ord_de += (t(d) >= t(e)) as u32;
        ord_ov += (f.accuracy.overall >= d.accuracy.overall) as u32;
    }
    println!("mean fur-erm tail gap {:.3}; fur>=dec tail {ord_td}/5; dec>=erm tail {ord_de}/5; fur>=dec overall {ord_ov}/5", gap / 5.0);
}
