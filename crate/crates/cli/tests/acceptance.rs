//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use flowcbr_core::cbr::{assess, calibrate_thresholds, CalibrationConfig};
use flowcbr_core::eval::synth::{prefix_templates, preset};
use flowcbr_core::eval::{
    build_index, evaluate, new_class_protocol, ood_probes, packet_sweep, plateau, prepare, synth_generate, write_json,
    PipelineConfig, SplitSpec, PLATEAU_EPSILON,
};
use flowcbr_core::features::groups::wavelet_coeffs;
use flowcbr_core::features::{extract_all, extract_features, FeatureSchema, FeatureVector, Group, TOTAL_SLOTS};
use flowcbr_core::forest::{ensemble_classify, train_forest, EnsembleSource};
use flowcbr_core::index::IndexConfig;
use flowcbr_core::{
    Backend, ClassRegistry, Direction, Flow, FlowPacket, Forest, Index, IndexEntry, TcpFlags, VerdictKind,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const SEED: u64 = 1;
const PER_CLASS: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn pipeline() -> PipelineConfig {
    let mut p = PipelineConfig { split: SplitSpec { seed: SEED, ..SplitSpec::default() }, ..PipelineConfig::default() };
    p.forest.seed = SEED;
    p
}

fn vectors(preset_name: &str) -> Vec<FeatureVector> {
    let flows = synth_generate(&preset(preset_name).unwrap(), PER_CLASS, SEED).unwrap();
    extract_all(&flows, &FeatureSchema::full(), &Default::default())
}

// 1 -------------------------------------------------------------------------

fn dataset(i: usize, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match i % 4 {
        0 => (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect(),
        // coarse grid: exact distance ties everywhere
        1 => (0..n).map(|_| (0..d).map(|_| f64::from(rng.random_range(0..3u8))).collect()).collect(),
        2 => {
            let centers: Vec<Vec<f64>> =
                (0..8).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            (0..n)
                .map(|_| {
                    let c = &centers[rng.random_range(0..centers.len())];
                    c.iter().map(|x| x + rng.random_range(-0.3..0.3)).collect()
                })
                .collect()
        }
        // every point stored three times
        _ => {
            let base: Vec<Vec<f64>> =
                (0..n.div_ceil(3)).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
            (0..n).map(|j| base[j % base.len()].clone()).collect()
        }
    }
}

fn backend_exactness() -> Outcome {
    let start = Instant::now();
    let (mut checked, mut mismatched) = (0usize, 0usize);
    for i in 0..20 {
        let n = [100, 1000, 5000][i % 3];
        let d = [11, 50, 183][(i / 3) % 3];
        let leaf = [1, 4, 32, 64][i % 4];
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let data = dataset(i, n, d, &mut rng);
        let entries: Vec<IndexEntry> =
            data.iter().enumerate().map(|(j, v)| IndexEntry::new(j as u64, format!("c{}", j % 5), v.clone())).collect();
        let build =
            |backend| Index::build(entries.clone(), IndexConfig { backend, leaf_size: leaf, dimension: d }).unwrap();
        let brute = build(Backend::Brute);
        let trees = [build(Backend::KdTree), build(Backend::BallTree)];
        let queries: Vec<Vec<f64>> =
            (0..30)
                .map(|q| {
                    if q % 2 == 0 {
                        data[rng.random_range(0..n)].clone()
                    } else {
                        dataset(i, 1, d, &mut rng).remove(0)
                    }
                })
                .collect();
        for q in &queries {
            for k in [1, 5, 10] {
                let want = brute.query_knn(q, k).unwrap();
                for t in &trees {
                    checked += 1;
                    if t.query_knn(q, k).unwrap() != want {
                        mismatched += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatched == 0 && elapsed < Duration::from_secs(60),
        format!("{checked} tree queries vs brute force, {mismatched} mismatches, {:.1}s", elapsed.as_secs_f64()),
    )
}

// 2 -------------------------------------------------------------------------

fn naive_dft(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

fn dft_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_rel, mut worst_parseval) = (0.0f64, 0.0f64);
    for s in 0..100 {
        let packets: Vec<FlowPacket> = (0..90)
            .map(|i| FlowPacket {
                timestamp: f64::from(i) * 0.01,
                direction: if rng.random::<bool>() { Direction::Fwd } else { Direction::Bwd },
                total_length: rng.random_range(40..=1500),
                payload_length: 0,
                tcp_flags: TcpFlags::ACK,
                tcp_window: None,
            })
            .collect();
        let signal: Vec<f64> = packets
            .iter()
            .map(|p| if p.direction == Direction::Fwd { f64::from(p.total_length) } else { -f64::from(p.total_length) })
            .collect();
        let flow = Flow::new(format!("s{s}"), None, packets);
        let got = wavelet_coeffs(&flow, 90);
        let want = naive_dft(&signal);
        for (g, w) in got.iter().zip(&want) {
            worst_rel = worst_rel.max((g - w).abs() / w.abs().max(1.0));
        }
        let energy: f64 = got.iter().map(|m| m * m).sum();
        let time = 90.0 * signal.iter().map(|v| v * v).sum::<f64>();
        worst_parseval = worst_parseval.max((energy - time).abs() / time);
    }
    outcome(
        worst_rel <= 1e-9 && worst_parseval <= 1e-9,
        format!("100 signals, worst relative error {worst_rel:.2e}, worst Parseval gap {worst_parseval:.2e}"),
    )
}

// 3 -------------------------------------------------------------------------

fn schema_width() -> Outcome {
    let schema = FeatureSchema::full();
    let widths: Vec<usize> = Group::ALL.iter().map(|&g| schema.span(g).map_or(0, |s| s.slots)).collect();
    let flows = synth_generate(&preset("standard").unwrap(), 3, SEED).unwrap();
    let lens: Vec<usize> = flows.iter().map(|f| extract_features(f, &schema).len()).collect();
    let table = [3, 30, 20, 20, 4, 2, 2, 9, 1, 1, 1, 90];
    outcome(
        widths == table && schema.total_slots() == 183 && TOTAL_SLOTS == 183 && lens.iter().all(|&l| l == 183),
        format!("group widths {widths:?}, total {}", schema.total_slots()),
    )
}

// 4 -------------------------------------------------------------------------

fn cbr_vs_forest(data: &[FeatureVector]) -> Outcome {
    let start = Instant::now();
    let r = evaluate(data, &pipeline()).unwrap();
    let (cbr, rf) = (r.cbr_closed.macro_f1, r.forest.macro_f1);
    let elapsed = start.elapsed();
    outcome(
        cbr >= 0.90 && rf >= 0.90 && (cbr - rf).abs() <= 0.05 && elapsed < Duration::from_secs(300),
        format!("macro-F1 CBR {cbr:.4}, RF {rf:.4}, |diff| {:.4}, {:.1}s", (cbr - rf).abs(), elapsed.as_secs_f64()),
    )
}

// 5 -------------------------------------------------------------------------

fn few_shot() -> Outcome {
    let data = vectors("standard+novel");
    let r = new_class_protocol(&data, "tunnel", 5, &pipeline()).unwrap();
    outcome(
        r.held_out_recall_after >= 0.80 && r.max_f1_drop <= 0.03,
        format!(
            "registered after {:?} samples, held-out recall {:.4}, max F1 drop {:.4}",
            r.samples_before_registration, r.held_out_recall_after, r.max_f1_drop
        ),
    )
}

// 6 and 8 -------------------------------------------------------------------

struct OpenSet {
    index: Index,
    forest: Forest,
    thresholds: flowcbr_core::Thresholds,
    test: Vec<Vec<f64>>,
    probes: Vec<Vec<f64>>,
}

fn open_set(data: &[FeatureVector]) -> OpenSet {
    let cfg = pipeline();
    let p = prepare(data, &cfg.split).unwrap();
    let index = build_index(&p.train, &p.train_labels, cfg.backend, cfg.leaf_size).unwrap();
    let thresholds = calibrate_thresholds(&p.train, &p.train_labels, &CalibrationConfig::default()).unwrap();
    let forest = train_forest(&p.train, &p.train_labels, &cfg.forest).unwrap();
    let probes = ood_probes(&index, 200, 2.0 * thresholds.theta_ood, SEED).unwrap();
    OpenSet { index, forest, thresholds, test: p.test, probes }
}

fn ood_rate(index: &Index, qs: &[Vec<f64>], th: &flowcbr_core::Thresholds) -> f64 {
    let n = qs.iter().filter(|q| assess(index, q, th).unwrap().kind == VerdictKind::Ood).count();
    n as f64 / qs.len() as f64
}

fn ood_discrimination(s: &OpenSet) -> Outcome {
    let far = ood_rate(&s.index, &s.probes, &s.thresholds);
    let near = ood_rate(&s.index, &s.test, &s.thresholds);
    outcome(
        far >= 0.95 && near <= 0.05,
        format!(
            "theta_ood {:.3}: far probes flagged {far:.3}, in-distribution flagged {near:.3}",
            s.thresholds.theta_ood
        ),
    )
}

fn ensemble_filter(s: &OpenSet) -> Outcome {
    let mut stream: Vec<&Vec<f64>> = s.test.iter().chain(&s.probes).collect();
    stream.shuffle(&mut ChaCha8Rng::seed_from_u64(SEED));
    let mut index = s.index.clone();
    let mut registry = ClassRegistry::from_index(&index);
    let (mut ood, mut leaked) = (0usize, 0usize);
    for q in stream {
        let v = ensemble_classify(&mut index, &mut registry, &s.forest, q, &s.thresholds).unwrap();
        if v.cbr_verdict().kind == VerdictKind::Ood {
            ood += 1;
            if v.source() == EnsembleSource::Forest || v.label().is_some() {
                leaked += 1;
            }
        }
    }
    outcome(ood > 0 && leaked == 0, format!("{ood} samples rejected as OOD, {leaked} received a forest label"))
}

// 7 -------------------------------------------------------------------------

fn sweep_plateau() -> Outcome {
    let flows = synth_generate(&prefix_templates(), PER_CLASS, SEED).unwrap();
    let counts = [2, 4, 6, 8, 10, 15, 20, 30];
    let points = packet_sweep(&flows, &counts, &pipeline()).unwrap();
    let p = plateau(&points, PLATEAU_EPSILON);
    let accs: Vec<String> = points.iter().map(|x| format!("{}:{:.3}", x.n_packets, x.accuracy)).collect();
    outcome(p.is_some_and(|n| n <= 15), format!("plateau at {p:?}, accuracy {}", accs.join(" ")))
}

// 9 -------------------------------------------------------------------------

fn report_files(dir: &Path, data: &[FeatureVector], novel: &[FeatureVector], flows: &[Flow]) {
    let cfg = pipeline();
    write_json(&evaluate(data, &cfg).unwrap(), dir.join("eval.json")).unwrap();
    write_json(&new_class_protocol(novel, "tunnel", 5, &cfg).unwrap(), dir.join("new_class.json")).unwrap();
    write_json(&packet_sweep(flows, &[4, 10, 20], &cfg).unwrap(), dir.join("sweep.json")).unwrap();
}

fn determinism(data: &[FeatureVector], s: &OpenSet) -> Outcome {
    let tmp = TempDir::new().unwrap();
    let novel = vectors("standard+novel");
    let flows = synth_generate(&prefix_templates(), 60, SEED).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        fs::create_dir_all(dir).unwrap();
        report_files(dir, data, &novel, &flows);
    }
    let identical = ["eval.json", "new_class.json", "sweep.json"]
        .iter()
        .all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let queries: Vec<Vec<f64>> =
        (0..100).map(|_| (0..s.index.dimension()).map(|_| rng.random::<f64>()).collect()).collect();
    let mut index_ok = true;
    for backend in Backend::ALL {
        let original = Index::build(s.index.entries().to_vec(), IndexConfig { backend, ..*s.index.config() }).unwrap();
        let path = tmp.path().join(format!("{backend}.json"));
        original.save(&path).unwrap();
        let loaded = Index::load(&path).unwrap();
        index_ok &= queries.iter().all(|q| original.query_knn(q, 5).unwrap() == loaded.query_knn(q, 5).unwrap());
    }
    let forest_path = tmp.path().join("forest.json");
    s.forest.save(&forest_path).unwrap();
    let loaded = Forest::load(&forest_path).unwrap();
    let forest_ok = queries.iter().all(|q| s.forest.votes(q).unwrap() == loaded.votes(q).unwrap());
    outcome(
        identical && index_ok && forest_ok,
        format!("reports identical: {identical}, index round-trips: {index_ok}, forest round-trip: {forest_ok}"),
    )
}

// 10 ------------------------------------------------------------------------

fn benchmark_report() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_flowcbr"))
        .args(["--out", tmp.path().to_str().unwrap(), "--seed", "10", "bench", "--n", "5000", "--dimension", "183"])
        .output()
        .unwrap();
    if !status.status.success() {
        return outcome(false, format!("bench failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let csv = fs::read_to_string(tmp.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(b), Some(build), Some(qps), Some(recall)) =
        (col("backend"), col("build_s"), col("qps"), col("recall_at_k"))
    else {
        return outcome(false, format!("bench.csv header {header:?}"));
    };
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let mut seen = Vec::new();
    let mut detail = Vec::new();
    for r in &rows {
        seen.push(r[b]);
        let q: f64 = r[qps].parse().unwrap_or(f64::NAN);
        let bs: f64 = r[build].parse().unwrap_or(f64::NAN);
        detail.push(format!("{} build {bs:.3}s {q:.0} q/s recall {}", r[b], r[recall]));
    }
    seen.sort_unstable();
    let exact = rows.iter().all(|r| r[recall] == "1");
    outcome(seen == ["balltree", "brute", "kdtree"] && exact, format!("d=183 n=5000: {}", detail.join("; ")))
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--list`; nothing to list here.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let standard = vectors("standard");
    let open = open_set(&standard);
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("backend exactness", Box::new(backend_exactness)),
        ("DFT oracle", Box::new(dft_oracle)),
        ("schema width", Box::new(schema_width)),
        ("CBR vs RF proximity", Box::new(|| cbr_vs_forest(&standard))),
        ("few-shot new class", Box::new(few_shot)),
        ("OOD discrimination", Box::new(|| ood_discrimination(&open))),
        ("packet-sweep plateau", Box::new(sweep_plateau)),
        ("ensemble filter", Box::new(|| ensemble_filter(&open))),
        ("determinism and round-trips", Box::new(|| determinism(&standard, &open))),
        ("benchmark report", Box::new(benchmark_report)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {:>2} {}: {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
