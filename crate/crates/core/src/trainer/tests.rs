use super::*;
use crate::policy::{BaselineConfig, Chooser, LastRound};
use crate::scene::{generate_scene, Scene};

fn scenes(count: usize, min: usize, max: usize, seed: u64) -> Vec<Scene> {
    let gen = SceneGenConfig {
        min_objects: min,
        max_objects: max,
        ..Default::default()
    };
    Dataset::generate(AttributeSchema::standard(), &gen, count, seed).unwrap().scenes
}

fn learner(seed: u64) -> VisualLearner {
    let schema = AttributeSchema::standard();
    VisualLearner::new(
        AttributeHeads::new(&schema.cardinalities(), VisionConfig::default(), seed),
        true,
    )
}

fn run(agent: &Agent<'_>, scenes: &[Scene], budget: usize, seed: u64) -> Vec<ImageRollout> {
    let schema = AttributeSchema::standard();
    let space = FeatureSpace::new(&schema, 0, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout(scenes, &schema, agent, &mut learner(seed), &space, budget, 0.1, &mut rng).unwrap()
}

fn tiny_config() -> EpisodeConfig {
    let mut c = EpisodeConfig {
        episodes: 3,
        images: 4,
        budget: 5,
        ..Default::default()
    };
    c.data.size = 40;
    c
}

#[test]
fn rewards_telescope_to_recall_gain() {
    let cfg = BaselineConfig::default();
    let net = PolicyNet::new(4, PolicyConfig::default(), 1);
    let agents = [
        Agent::Random,
        Agent::Entropy(&cfg),
        Agent::EntropyContext(&cfg),
        Agent::Learned {
            net: &net,
            mode: SampleMode::Train,
        },
    ];
    let s = scenes(12, 5, 8, 3);
    for agent in &agents {
        for img in run(agent, &s, 20, 4) {
            let d = &img.record;
            assert!(d.rounds.len() <= 20);
            assert!((d.total_reward() - (d.final_recall - d.init_recall)).abs() < 1e-12);
            assert_eq!(d.final_recall, img.memory.recall(&s[d.image_index - 1]).unwrap());
        }
    }
}

#[test]
fn zero_budget_keeps_bottom_up_recall() {
    for img in run(&Agent::Random, &scenes(5, 5, 8, 5), 0, 6) {
        assert!(img.record.rounds.is_empty());
        assert_eq!(img.record.final_recall, img.record.init_recall);
    }
}

#[test]
fn omniscient_agent_gains_one_slot_per_round() {
    let s = scenes(6, 5, 8, 7);
    let schema = AttributeSchema::standard();
    let space = FeatureSpace::new(&schema, 0, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let settings = RolloutSettings {
        budget: 12,
        sigma: 0.1,
        sequence_len: 6,
    };
    for scene in &s {
        // a fresh, untrained visual system commits nothing
        let mut l = learner(9);
        let img = run_image(scene, &schema, 1, &Agent::Omniscient, &mut l, &space, &settings, &mut rng).unwrap();
        assert_eq!(img.record.init_recall, 0.0);
        let slots = (scene.len() * 4) as f64;
        for r in &img.record.rounds {
            assert!(r.answer.is_value());
            assert!((r.recall_after - r.round as f64 / slots).abs() < 1e-12);
        }
    }
}

#[test]
fn dialogs_end_once_every_slot_is_committed() {
    let s = scenes(4, 5, 5, 10);
    let mut ended_early = 0;
    for img in run(&Agent::Omniscient, &s, 40, 11) {
        if img.record.rounds.len() < 40 {
            assert!(img.memory.all_committed());
            ended_early += 1;
        }
        assert_eq!(img.record.held_curve(40)[39], img.record.final_recall);
    }
    assert!(ended_early > 0);
}

#[test]
fn learned_rollout_records_forward_passes() {
    let net = PolicyNet::new(4, PolicyConfig::default(), 2);
    let agent = Agent::Learned {
        net: &net,
        mode: SampleMode::Train,
    };
    for img in run(&agent, &scenes(3, 5, 8, 12), 6, 13) {
        assert_eq!(img.outputs.len(), img.record.rounds.len());
        for r in &img.record.rounds {
            assert!(r.log_prob.unwrap() <= 0.0);
            assert!(r.value_reference.is_some());
        }
    }
}

#[test]
fn zero_advantage_leaves_only_value_and_entropy_gradients() {
    let img = run(
        &Agent::Learned {
            net: &PolicyNet::new(4, PolicyConfig::default(), 3),
            mode: SampleMode::Train,
        },
        &scenes(1, 5, 5, 14),
        3,
        15,
    );
    let d = &img[0].record;
    let out = &img[0].outputs[0];
    let t = crate::policy::RoundTargets {
        ret: d.rounds[0].reward,
        adv_target: 0.0,
        adv_reference: 0.0,
    };
    let no_entropy = crate::policy::LossWeights {
        value: 0.5,
        entropy: 0.0,
    };
    let (_, g) = crate::policy::round_loss(out, &t, &no_entropy);
    assert!(g.target_logits.iter().all(|&x| x == 0.0));
    assert!(g.reference_logits.iter().all(|&x| x == 0.0));
    assert_eq!(g.use_logit, 0.0);
    assert!(g.value_target != 0.0 || out.value_target == t.ret);
}

#[test]
fn perfect_critic_gives_near_zero_advantages() {
    let s = scenes(3, 5, 6, 16);
    let mut imgs = run(&Agent::Omniscient, &s, 4, 17);
    for img in &mut imgs {
        let g = discounted_returns(&img.record.rewards(), 1.0);
        for (r, g) in img.record.rounds.iter_mut().zip(g) {
            r.value_target = Some(g);
            r.value_reference = Some(g);
        }
    }
    let recs: Vec<&DialogRecord> = imgs.iter().map(|i| &i.record).collect();
    let ret = compute_returns(&recs, 1.0, true);
    for a in ret.adv_target.iter().chain(&ret.adv_reference).flatten() {
        assert!(a.abs() < 1e-6, "{a}");
    }
}

#[test]
fn training_is_reproducible() {
    let cfg = tiny_config();
    let data = cfg.data.dataset().unwrap();
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.net.to_checkpoint(), b.net.to_checkpoint());
    assert_eq!(a.curve.len(), 3);
}

#[test]
fn zero_learning_rate_freezes_the_policy() {
    let mut cfg = tiny_config();
    cfg.a2c.lr = 0.0;
    let data = cfg.data.dataset().unwrap();
    let out = train(&cfg, &data).unwrap();
    let fresh = PolicyNet::new(4, cfg.policy.clone(), cfg.seed);
    assert_eq!(out.net.params().to_checkpoint("policy").params, fresh.params().to_checkpoint("policy").params);
}

#[test]
fn episode_vision_is_a_fresh_draw() {
    let cards = AttributeSchema::standard().cardinalities();
    let a = AttributeHeads::new(&cards, VisionConfig::default(), episode_vision_seed(5, 2));
    let b = AttributeHeads::new(&cards, VisionConfig::default(), episode_vision_seed(5, 2));
    let c = AttributeHeads::new(&cards, VisionConfig::default(), episode_vision_seed(5, 3));
    assert_eq!(a.to_checkpoint(), b.to_checkpoint());
    assert_ne!(a.to_checkpoint(), c.to_checkpoint());
}

#[test]
fn config_round_trips_and_validates() {
    let c = EpisodeConfig::paper_scale();
    assert_eq!(EpisodeConfig::from_toml(&c.to_toml()).unwrap(), c);
    let partial = EpisodeConfig::from_toml("episodes = 7\n[a2c]\ngamma = 0.5\n").unwrap();
    assert_eq!((partial.episodes, partial.images, partial.a2c.gamma), (7, 30, 0.5));
    assert!(EpisodeConfig::from_toml("images = 0").is_err());
    assert!(EpisodeConfig::from_toml("[a2c]\ngamma = 1.5").is_err());
}

/// Two objects, one question: zero-hop questions are always answerable
/// while a reference to an undescribed object is ambiguous.
#[test]
fn bandit_learns_to_skip_the_reference() {
    let schema = AttributeSchema::standard();
    let gen = SceneGenConfig {
        min_objects: 2,
        max_objects: 2,
        ..Default::default()
    };
    let scene = generate_scene(&schema, &gen, 21).unwrap();
    let data = Dataset {
        schema: schema.clone(),
        scenes: vec![scene.clone(), scene.clone()],
    };
    let mut cfg = EpisodeConfig {
        episodes: 300,
        images: 1,
        budget: 1,
        ..Default::default()
    };
    cfg.a2c.lr = 1e-2;

    let p_no_ref = |net: &PolicyNet| {
        let mem = crate::memory::GraphMemory::for_scene(&scene, &schema).unwrap();
        let out = net
            .forward_round(
                &net.raw_input(&mem, None::<&LastRound>).unwrap(),
                &net.initial_state(2),
                &net.affinity(mem.locations()),
                &net.target_mask(&mem),
                Chooser::Sample {
                    mode: SampleMode::Eval,
                    rng: &mut ChaCha8Rng::seed_from_u64(0),
                },
            )
            .unwrap();
        out.use_probs.unwrap()[0]
    };
    let before = p_no_ref(&PolicyNet::new(4, cfg.policy.clone(), cfg.seed));
    let out = train(&cfg, &data).unwrap();
    let after = p_no_ref(&out.net);
    assert!(after > 0.9, "P(no reference) {before:.3} -> {after:.3}");
}
