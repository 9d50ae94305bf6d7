//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.
//! Criteria 4 to 8 share one desk-scale training run.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use curio_core::harness::{
    ablate, evaluate, grad_suite, mean_std, pooled, AblationConfig, AblationReport, EvalConfig, FoldResult,
    VisionStart,
};
use curio_core::memory::{GraphMemory, Provenance};
use curio_core::nnet::SampleMode;
use curio_core::policy::{baseline_entropy, baseline_random, BaselineConfig};
use curio_core::qdsl::{compose_program, dominant_relation, execute, is_closest_in_relation, OracleAnswer, QuestionAction};
use curio_core::scene::{extremal_position, generate_scene, AttributeSchema, BBox, Dataset, Position, Scene, SceneGenConfig};
use curio_core::trainer::{train, Agent, EpisodeConfig, VisualLearner};
use curio_core::vision::{featurize, AttributeHeads, FeatureSpace, VisionConfig};

const LAYER_TOL: f64 = 1e-4;
const COMPOSITE_TOL: f64 = 1e-3;
const ORDER_GAP: f64 = 0.10;
const TRANSFER_TOL: f64 = 0.08;
const MIXED_GAP: f64 = 0.10;
const STATIC_EARLY_GAP: f64 = 0.05;
const STATIC_LATE_TOL: f64 = 0.08;
const TELESCOPE_TOL: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-9;

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------- 1

fn mask(pred: impl Fn(usize) -> bool, n: usize) -> u32 {
    (0..n).filter(|&o| pred(o)).fold(0, |m, o| m | 1 << o)
}

/// Set-intersection answer for `action`, computed from object bitmasks.
fn brute_force(scene: &Scene, mem: &GraphMemory, action: &QuestionAction) -> OracleAnswer {
    let n = scene.len();
    let boxes = scene.boxes();
    let attr_mask = |k: usize, skip: Option<usize>| {
        (0..mem.num_concepts())
            .filter(|&c| Some(c) != skip)
            .filter_map(|c| mem.committed(k, c).map(|v| (c, v)))
            .fold(u32::MAX, |m, (c, v)| m & mask(|o| scene.objects[o].attributes[c] == v, n))
    };
    let (k, a) = (action.target_object, action.target_concept);
    let mut set = attr_mask(k, Some(a)) & mask(|_| true, n);
    match action.reference {
        None => {
            if let Some(h) = holder_of(extremal_position(&boxes, k), &boxes) {
                set &= 1 << h;
            }
        }
        Some(r) => {
            let anchors = attr_mask(r, None) & mask(|_| true, n);
            match anchors.count_ones() {
                0 => return OracleAnswer::Invalid,
                1 => {}
                _ => return OracleAnswer::Ambiguous,
            }
            let anchor = anchors.trailing_zeros() as usize;
            let rel = dominant_relation(&boxes[k], &boxes[r]);
            let mut related = mask(|o| o != anchor && rel.holds(&boxes[o], &boxes[anchor]), n);
            if is_closest_in_relation(&boxes, k, r, rel) {
                let d = |o: usize| boxes[o].center_distance(&boxes[anchor]);
                related = (0..n)
                    .filter(|&o| related & 1 << o != 0)
                    .min_by(|&x, &y| d(x).total_cmp(&d(y)))
                    .map_or(0, |o| 1 << o);
            }
            set &= related;
        }
    }
    match set.count_ones() {
        0 => OracleAnswer::Invalid,
        1 => OracleAnswer::Value {
            concept: a,
            value: scene.objects[set.trailing_zeros() as usize].attributes[a],
        },
        _ => OracleAnswer::Ambiguous,
    }
}

/// Object holding `position`, by direct comparison of box centers.
fn holder_of(position: Position, boxes: &[BBox]) -> Option<usize> {
    let key = |o: usize| {
        let (cx, cy) = boxes[o].center();
        match position {
            Position::LeftMost => cx,
            Position::RightMost => -cx,
            Position::Closest => -cy,
            Position::Farthest => cy,
            Position::None => f64::NAN,
        }
    };
    if position == Position::None {
        return None;
    }
    (0..boxes.len()).min_by(|&a, &b| key(a).total_cmp(&key(b)))
}

#[test]
fn criterion_1_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gen = SceneGenConfig {
        min_objects: 2,
        max_objects: 10,
        ..Default::default()
    };
    let (mut programs, mut mismatches) = (0usize, 0usize);
    for s in 0..500u64 {
        let schema = if s % 2 == 0 { AttributeSchema::standard() } else { AttributeSchema::mixed() };
        let scene = generate_scene(&schema, &gen, s).unwrap();
        let mut mem = GraphMemory::for_scene(&scene, &schema).unwrap();
        let card = schema.cardinalities();
        for (k, obj) in scene.objects.iter().enumerate() {
            for (c, &truth) in obj.attributes.iter().enumerate() {
                let u: f64 = rng.random();
                if u < 0.45 {
                    mem.commit(k, c, truth, Provenance::Oracle).unwrap();
                } else if u < 0.6 {
                    mem.commit(k, c, rng.random_range(0..card[c]), Provenance::Vision).unwrap();
                }
            }
        }
        for k in 0..scene.len() {
            for a in 0..schema.num_concepts() {
                let refs = std::iter::once(None).chain((0..scene.len()).filter(|&r| r != k).map(Some));
                for reference in refs {
                    let action = QuestionAction {
                        target_object: k,
                        target_concept: a,
                        reference,
                    };
                    let q = compose_program(&action, &mem, &schema).unwrap();
                    let got = execute(&q.program, &scene, &schema).unwrap();
                    programs += 1;
                    if got != brute_force(&scene, &mem, &action) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(60);
    report(1, pass, &format!("{mismatches} mismatches over {programs} programs in {elapsed:.1?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let checks = grad_suite(0..10);
    let elapsed = start.elapsed();
    let worst = |composite: bool| {
        checks
            .iter()
            .filter(|c| c.name.contains("composite") == composite)
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max)
    };
    let (layer, composite) = (worst(false), worst(true));
    let seeds = checks.iter().map(|c| c.seed).collect::<std::collections::BTreeSet<_>>().len();
    let pass = layer <= LAYER_TOL && composite <= COMPOSITE_TOL && seeds == 10 && elapsed < Duration::from_secs(60);
    report(
        2,
        pass,
        &format!(
            "{} checks over {seeds} seeds, worst layer {layer:.2e}, worst composite {composite:.2e}, {elapsed:.1?}",
            checks.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[derive(Default)]
struct LawViolations {
    monotonicity: usize,
    telescoping: usize,
    oracle_immutability: usize,
    simplex: usize,
}

fn simplex_ok(mem: &GraphMemory) -> bool {
    (0..mem.num_objects()).all(|k| {
        (0..mem.num_concepts()).all(|a| {
            let p = mem.slot(k, a);
            p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < SIMPLEX_TOL
        })
    })
}

#[test]
fn criterion_3_memory_laws() {
    const TARGET_ROUNDS: usize = 10_000;
    const SEQUENCE: usize = 10;
    let schema = AttributeSchema::standard();
    let data = Dataset::generate(schema.clone(), &SceneGenConfig::default(), 1200, 3).unwrap();
    let vcfg = VisionConfig {
        lr: 1e-3,
        ..VisionConfig::default()
    };
    let space = FeatureSpace::new(&schema, 0, vcfg.feature_dim);
    let baseline = BaselineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut v = LawViolations::default();
    let (mut rounds, mut dialogs) = (0usize, 0usize);
    'outer: for (seq, chunk) in data.scenes.chunks(SEQUENCE).enumerate() {
        let heads = AttributeHeads::new(&schema.cardinalities(), vcfg.clone(), seq as u64);
        let mut learner = VisualLearner::new(heads, true);
        for (i, scene) in chunk.iter().enumerate() {
            let features = featurize(scene, &space, vcfg.noise_sigma).unwrap();
            let mut mem = GraphMemory::for_scene(scene, &schema).unwrap();
            let vg = learner.heads.predict(&features, mem.locations()).unwrap();
            mem.bottom_up_update(&vg, i + 1, SEQUENCE).unwrap();
            v.simplex += usize::from(!simplex_ok(&mem));
            let init = mem.recall(scene).unwrap();
            let (mut prev, mut total) = (init, 0.0);
            for _ in 0..20 {
                if mem.all_committed() {
                    break;
                }
                let action = if rounds % 2 == 0 {
                    baseline_random(&mem, &mut rng).unwrap()
                } else {
                    baseline_entropy(&mem, &baseline, &mut rng).unwrap()
                };
                let frozen: Vec<(usize, usize, Vec<f64>)> = (0..mem.num_objects())
                    .flat_map(|k| (0..mem.num_concepts()).map(move |a| (k, a)))
                    .filter(|&(k, a)| mem.provenance(k, a) == Provenance::Oracle)
                    .map(|(k, a)| (k, a, mem.slot(k, a).to_vec()))
                    .collect();
                let q = compose_program(&action, &mem, &schema).unwrap();
                let answer = execute(&q.program, scene, &schema).unwrap();
                mem.top_down_update(action.target_object, action.target_concept, &answer).unwrap();
                let after = mem.recall(scene).unwrap();
                v.monotonicity += usize::from(after < prev);
                v.oracle_immutability += frozen
                    .iter()
                    .filter(|(k, a, p)| mem.provenance(*k, *a) != Provenance::Oracle || mem.slot(*k, *a) != &p[..])
                    .count();
                v.simplex += usize::from(!simplex_ok(&mem));
                total += after - prev;
                prev = after;
                rounds += 1;
            }
            v.telescoping += usize::from((total - (prev - init)).abs() > TELESCOPE_TOL);
            dialogs += 1;
            learner.data.add_memory(&features, &mem).unwrap();
            learner.heads.train(&learner.data, &mut rng).unwrap();
            learner.heads.decay_lr();
            if rounds >= TARGET_ROUNDS {
                break 'outer;
            }
        }
    }
    let bad = v.monotonicity + v.telescoping + v.oracle_immutability + v.simplex;
    let pass = rounds >= TARGET_ROUNDS && bad == 0;
    report(
        3,
        pass,
        &format!(
            "{rounds} rounds in {dialogs} dialogs; violations: monotonicity {}, telescoping {}, oracle immutability {}, simplex {}",
            v.monotonicity, v.telescoping, v.oracle_immutability, v.simplex
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4 to 8

struct Desk {
    train_time: Duration,
    eval_time: Duration,
    standard: [f64; 4],
    novel: f64,
    mixed: f64,
    mixed_random: f64,
    ablation: AblationReport,
}

fn mean_auc(folds: &[FoldResult]) -> f64 {
    mean_std(&folds.iter().map(|f| f.auc).collect::<Vec<_>>()).0
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let cfg = EpisodeConfig::desk();
        let data = cfg.data.dataset().unwrap();
        let start = Instant::now();
        let out = train(&cfg, &data).unwrap();
        let train_time = start.elapsed();

        let ecfg = EvalConfig {
            world_seed: cfg.world_seed,
            budget: cfg.budget,
            ..EvalConfig::default()
        };
        let baseline = BaselineConfig::default();
        let learned = Agent::Learned {
            net: &out.net,
            mode: SampleMode::Eval,
        };
        let agents = [
            Agent::Random,
            Agent::Entropy(&baseline),
            Agent::EntropyContext(&baseline),
            learned,
        ];
        let start = Instant::now();
        let test = data.splits().2;
        let standard = agents.map(|a| mean_auc(&evaluate(&a, test, &data.schema, &ecfg, &VisionStart::Fresh).unwrap()));
        let eval_time = start.elapsed();

        let gen = &cfg.data.generator;
        let novel = Dataset::generate(AttributeSchema::novel(), gen, cfg.data.size, cfg.data.seed).unwrap();
        let mixed = Dataset::generate(AttributeSchema::mixed(), gen, cfg.data.size, cfg.data.seed).unwrap();
        let run = |a: &Agent, d: &Dataset| {
            mean_auc(&evaluate(a, d.splits().2, &d.schema, &ecfg, &VisionStart::Fresh).unwrap())
        };
        let novel_auc = run(&learned, &novel);
        let mixed_auc = run(&learned, &mixed);
        let mixed_random = run(&Agent::Random, &mixed);

        let mut acfg = AblationConfig::default();
        acfg.eval.world_seed = cfg.world_seed;
        acfg.object_counts = vec![5, 8];
        let static_cfg = EpisodeConfig {
            static_vision: true,
            budget: acfg.eval.budget,
            ..cfg.clone()
        };
        let static_net = train(&static_cfg, &data).unwrap().net;
        let static_agent = Agent::Learned {
            net: &static_net,
            mode: SampleMode::Eval,
        };
        let ablation = ablate(&learned, &static_agent, test, mixed.splits().2, data.splits().0, &acfg).unwrap();
        Desk {
            train_time,
            eval_time,
            standard,
            novel: novel_auc,
            mixed: mixed_auc,
            mixed_random,
            ablation,
        }
    })
}

#[test]
fn criterion_4_policy_ordering() {
    let d = desk();
    let [random, entropy, context, learned] = d.standard;
    let total = d.train_time + d.eval_time;
    let pass = learned > context
        && context > entropy
        && entropy > random
        && learned - random >= ORDER_GAP
        && total < Duration::from_secs(30 * 60);
    report(
        4,
        pass,
        &format!(
            "AUC learned {learned:.4} > entropy-context {context:.4} > entropy {entropy:.4} > random {random:.4}, gap {:.4}, train {:.1?} + eval {:.1?}",
            learned - random,
            d.train_time,
            d.eval_time
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_double_generalization() {
    let d = desk();
    let standard = d.standard[3];
    let pass = (d.novel - standard).abs() <= TRANSFER_TOL && d.mixed >= d.mixed_random + MIXED_GAP;
    report(
        5,
        pass,
        &format!(
            "AUC standard {standard:.4}, novel {:.4} (diff {:.4}), mixed {:.4} vs random on mixed {:.4}",
            d.novel,
            (d.novel - standard).abs(),
            d.mixed,
            d.mixed_random
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_static_vision() {
    let r = &desk().ablation;
    let last = r.full_curve.len() - 1;
    let early = r.full_curve[4] - r.static_curve[4];
    let late = (r.full_curve[last] - r.static_curve[last]).abs();
    let pass = early >= STATIC_EARLY_GAP && late <= STATIC_LATE_TOL && r.static_vision_commits == 0;
    report(
        6,
        pass,
        &format!(
            "round 5: full {:.4} static {:.4}; round {}: full {:.4} static {:.4}",
            r.full_curve[4],
            r.static_curve[4],
            last + 1,
            r.full_curve[last],
            r.static_curve[last]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_question_type_drift() {
    let h = &desk().ablation.question_types;
    let t = h.len();
    let (early, late) = (pooled(h, 1, 5), pooled(h, t - 4, t));
    let pass = early.valid() > 0 && late.valid() > 0 && early.zero_hop_share() > late.zero_hop_share();
    report(
        7,
        pass,
        &format!(
            "zero-hop share of valid questions: rounds 1-5 {:.4} ({} valid), rounds {}-{} {:.4} ({} valid)",
            early.zero_hop_share(),
            early.valid(),
            t - 4,
            t,
            late.zero_hop_share(),
            late.valid()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_object_count_stress() {
    let rows = &desk().ablation.object_counts;
    let five = rows.iter().find(|r| r.objects == 5).unwrap();
    let eight = rows.iter().find(|r| r.objects == 8).unwrap();
    let pass = eight.final_recall < five.final_recall && eight.failure_share > five.failure_share;
    report(
        8,
        pass,
        &format!(
            "K=5 recall {:.4} failures {:.4}; K=8 recall {:.4} failures {:.4}",
            five.final_recall, five.failure_share, eight.final_recall, eight.failure_share
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

const SMALL_TRAIN: &str = "episodes = 3\nimages = 6\nbudget = 5\n[data]\nsize = 120\n";
const SMALL_EVAL: &str = "[eval]\nbudget = 5\nfolds = 2\nfold_size = 10\nrepeats = 2\n[data]\nsize = 120\n";

fn curio(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_curio")).args(args).output().unwrap();
    assert!(out.status.success(), "curio {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn train_and_eval(root: &Path) -> Vec<(String, Vec<u8>)> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (tcfg, ecfg) = (root.join("train.toml"), root.join("eval.toml"));
    fs::write(&tcfg, SMALL_TRAIN).unwrap();
    fs::write(&ecfg, SMALL_EVAL).unwrap();
    let (tout, eout) = (root.join("train"), root.join("eval"));
    curio(&["train", "--seed", "7", "--config", &s(&tcfg), "--out", &s(&tout)]);
    let ckpt = tout.join("policy.json");
    curio(&[
        "eval",
        "--seed",
        "7",
        "--config",
        &s(&ecfg),
        "--out",
        &s(&eout),
        "--policy",
        "random,entropy,entropy-context,learned",
        "--checkpoint",
        &s(&ckpt),
    ]);
    let mut files = tree(&tout);
    files.extend(tree(&eout).into_iter().map(|(n, b)| (format!("eval/{n}"), b)));
    files
}

#[test]
fn criterion_9_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = train_and_eval(a.path());
    let second = train_and_eval(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = first.len() == second.len() && differing.is_empty() && first.len() > 5;
    report(
        9,
        pass,
        &format!("{} output files compared, {} differ {:?}", first.len(), differing.len(), differing),
    );
    assert!(pass);
}
