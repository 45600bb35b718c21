//! Acceptance gate for the whole pipeline, one test per criterion:
//!
//! 1. the two scripted walkthroughs replay their golden transcripts
//! 2. the four-configuration sweep orders success rates monotonically
//! 3. corpus structure invariants hold across 50 seeded generation runs
//! 4. the question cache is order-symmetric and prevents repeat generation
//! 5. call equivalence behaves as an equivalence relation
//! 6. parameter verdicts always settle on a predicted value or the none token
//! 7. identical seeds reproduce byte-identical artifacts
//!
//! Set UPDATE_GOLDENS=1 to rewrite the golden files from current output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use toolverify::backend::{BackendRouter, ScriptRuleFile, ScriptedBackend, StageTag};
use toolverify::datagen::{assemble_dataset, build_library_registry, DatagenConfig, SeedPool};
use toolverify::eval::{calls_equivalent, parse_call, CanonicalCall, NonePolicy};
use toolverify::paramgen::{predict_parameters, Verdict};
use toolverify::registry::{CandidateSet, ParamKind, ParamSpec, Registry, ToolSpec};
use toolverify::selector::{
    parse_tool_action, precompute_questions, verified_select, SelectOptions, VqCache, VqCacheKey,
};
use toolverify::similarity::HashedNgramEmbedder;

const CAR_INSTRUCTION: &str = "While I was coming back home from the office, I saw a kid in Audi Q7. Where can I buy this car within 10 miles?";
const CAR_CALL: &str =
    "curl -X GET 'https://api.cars.example/v1/dealers/search?model=Audi Q7&radius=10&key={CARS_API_KEY}'";
const AIR_INSTRUCTION: &str =
    "What is the air pollution in the location with latitude -24.7 and longitude -57.3 right now?";
const AIR_CALL: &str =
    "curl -X GET 'https://api.openweathermap.org/data/2.5/air_pollution?lat=-24.7&lon=-57.3&appid={API_KEY}'";

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn fixture(rel: &str) -> String {
    repo_path(rel).to_str().expect("fixture path is utf-8").to_string()
}

fn run_cli(args: &[&str]) -> String {
    let output = Command::new(env!("CARGO_BIN_EXE_toolverify"))
        .args(args)
        .output()
        .expect("binary spawns");
    assert!(
        output.status.success(),
        "toolverify {:?} exited with {:?}\nstderr: {}",
        args,
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).expect("stdout is utf-8")
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn assert_matches_golden(actual: &Path, golden_rel: &str) {
    let golden = repo_path(golden_rel);
    let produced = read_bytes(actual);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::write(&golden, &produced).expect("golden rewritten");
        return;
    }
    let expected = read_bytes(&golden);
    assert!(
        produced == expected,
        "{} deviates from {golden_rel}; run with UPDATE_GOLDENS=1 to accept the new output",
        actual.display()
    );
}

fn load_rules(rel: &str) -> Vec<ScriptRuleFile> {
    let text = std::fs::read_to_string(repo_path(rel)).expect("rule file readable");
    serde_json::from_str(&text).expect("rule file parses")
}

fn rule(pattern: &str, response: &str) -> ScriptRuleFile {
    ScriptRuleFile {
        r#match: pattern.to_string(),
        response: response.to_string(),
        once: false,
        regex: false,
    }
}

fn rule_once(pattern: &str, response: &str) -> ScriptRuleFile {
    ScriptRuleFile {
        once: true,
        ..rule(pattern, response)
    }
}

fn rule_regex(pattern: &str, response: &str) -> ScriptRuleFile {
    ScriptRuleFile {
        regex: true,
        ..rule(pattern, response)
    }
}

#[test]
fn criterion_1_golden_walkthroughs_replay_exactly() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");

    let car_dir = tmp.path().join("car");
    let stdout = run_cli(&[
        "call",
        "--registry",
        &fixture("fixtures/registry/cardealer.json"),
        "--script",
        &fixture("fixtures/scripts/cardealer.json"),
        "--instruction",
        CAR_INSTRUCTION,
        "--transcripts",
        car_dir.to_str().unwrap(),
    ]);
    let doc: Value = serde_json::from_str(&stdout).expect("call output is JSON");
    assert_eq!(doc["selection"]["top1"], "CarFinder");
    assert_eq!(doc["selection"]["top2"], "CarLocator");
    assert_eq!(doc["selection"]["final"], "CarFinder");
    assert_eq!(doc["call"], CAR_CALL);
    assert_matches_golden(
        &car_dir.join("transcripts.jsonl"),
        "fixtures/golden/cardealer_transcripts.jsonl",
    );

    let air_dir = tmp.path().join("air");
    let stdout = run_cli(&[
        "call",
        "--registry",
        &fixture("fixtures/registry/pool17.json"),
        "--script",
        &fixture("fixtures/scripts/airpollution.json"),
        "--instruction",
        AIR_INSTRUCTION,
        "--transcripts",
        air_dir.to_str().unwrap(),
    ]);
    let doc: Value = serde_json::from_str(&stdout).expect("call output is JSON");
    assert_eq!(doc["selection"]["top1"], "Forecast Air Pollution");
    assert_eq!(doc["selection"]["top2"], "Current Air Pollution");
    assert_eq!(doc["selection"]["final"], "Current Air Pollution");
    assert_eq!(doc["call"], AIR_CALL);
    assert_matches_golden(
        &air_dir.join("transcripts.jsonl"),
        "fixtures/golden/airpollution_transcripts.jsonl",
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(1),
        "walkthroughs took {elapsed:?}, budget is 1 s"
    );
    println!("criterion 1: PASS (both walkthroughs match their golden transcripts in {elapsed:?})");
}

#[test]
fn criterion_2_verification_sweep_orders_success_rates() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");
    let report_path = tmp.path().join("report.json");
    let stdout = run_cli(&[
        "eval",
        "--registry",
        &fixture("fixtures/registry/pool17.json"),
        "--script",
        &fixture("fixtures/scripts/minitask.json"),
        "--task",
        &fixture("fixtures/tasks/minitask.jsonl"),
        "--sweep",
        "--report-out",
        report_path.to_str().unwrap(),
    ]);

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).expect("report written"))
            .expect("report is JSON");
    let entries = report.as_array().expect("report is an array");
    assert_eq!(entries.len(), 4, "sweep covers four configurations");
    let mut rates: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for entry in entries {
        let config = entry["config"].as_str().expect("config label").to_string();
        let reports = entry["reports"].as_array().expect("reports array");
        assert_eq!(reports.len(), 1, "one task in the mini sweep");
        let task = &reports[0];
        assert_eq!(task["task"], "Mini");
        assert_eq!(task["n"], 10);
        assert_eq!(
            task["records"].as_array().expect("records").len(),
            10,
            "config {config} keeps all ten records"
        );
        let selection = task["selection_accuracy"].as_f64().expect("selection rate");
        let success = task["success_rate"].as_f64().expect("success rate");
        rates.insert(config, (selection, success));
    }

    let none = rates["none"];
    let tool_only = rates["tool-only"];
    let param_only = rates["param-only"];
    let both = rates["both"];
    assert!(
        none.1 < tool_only.1,
        "tool verification must lift success over none ({} vs {})",
        tool_only.1,
        none.1
    );
    assert!(
        none.1 < param_only.1,
        "parameter verification must lift success over none ({} vs {})",
        param_only.1,
        none.1
    );
    let max_success = rates.values().map(|r| r.1).fold(f64::MIN, f64::max);
    assert_eq!(both.1, max_success, "both verifiers together score highest");
    assert_eq!(none, (70.0, 40.0));
    assert_eq!(tool_only, (100.0, 70.0));
    assert_eq!(param_only, (70.0, 70.0));
    assert_eq!(both, (100.0, 100.0));

    let sample_lines = stdout
        .lines()
        .filter(|l| l.starts_with("sample "))
        .count();
    assert_eq!(sample_lines, 40, "ten per-sample log lines per configuration");
    assert_eq!(stdout.matches("== Mini / ").count(), 4);

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(5),
        "sweep took {elapsed:?}, budget is 5 s"
    );
    println!(
        "criterion 2: PASS (success rates none={} tool-only={} param-only={} both={} in {elapsed:?})",
        none.1, tool_only.1, param_only.1, both.1
    );
}

#[test]
fn criterion_3_corpus_structure_holds_across_seeds() {
    let started = Instant::now();
    let rules = load_rules("fixtures/scripts/datagen.json");
    let seeds = SeedPool::default_seeds();
    let embedder = HashedNgramEmbedder::default();

    let grow = |backend: &ScriptedBackend| {
        build_library_registry(&seeds, backend, &embedder, 1, 2, 7)
            .expect("library grows")
            .0
    };
    let config_for = |seed: u64, shuffle: bool| DatagenConfig {
        hard_ratio: 0.2,
        k: 7,
        seed,
        max_note_tokens: 64,
        shuffle,
        instructions_per_tool: 3,
    };

    let mut samples_seen = 0usize;
    for seed in 0..50u64 {
        let backend = ScriptedBackend::new(rules.clone()).expect("backend builds");
        let registry = grow(&backend);
        let (samples, stats) =
            assemble_dataset(&registry, &backend, &config_for(seed, true)).expect("corpus builds");
        assert!(!samples.is_empty(), "seed {seed} produced an empty corpus");
        assert_eq!(stats.n_dropped, 0, "seed {seed} dropped samples");
        for (i, sample) in samples.iter().enumerate() {
            assert!(
                sample.candidates.contains(&sample.ground_truth),
                "seed {seed} sample {i}: ground truth missing from candidates"
            );
            assert_eq!(
                sample.candidates.ground_truth.as_deref(),
                Some(sample.ground_truth.as_str())
            );
            let parsed = parse_tool_action(&sample.target, &sample.candidates.tools)
                .unwrap_or_else(|e| panic!("seed {seed} sample {i}: target unparseable: {e}"));
            assert_eq!(parsed, sample.ground_truth, "seed {seed} sample {i}");
            let width = sample.candidates.len();
            assert!(
                (2..=8).contains(&width),
                "seed {seed} sample {i}: {width} candidates"
            );
            if sample.hard {
                let related = &registry
                    .require(&sample.ground_truth)
                    .expect("ground truth registered")
                    .related;
                for name in &sample.candidates.tools {
                    assert!(
                        name == &sample.ground_truth || related.contains(name),
                        "seed {seed} sample {i}: hard candidate `{name}` is unrelated"
                    );
                }
            }
        }
        samples_seen += samples.len();
    }

    let backend = ScriptedBackend::new(rules).expect("backend builds");
    let registry = grow(&backend);
    let (samples, _) =
        assemble_dataset(&registry, &backend, &config_for(3, false)).expect("corpus builds");
    for (i, sample) in samples.iter().enumerate() {
        assert_eq!(
            sample.candidates.tools[0], sample.ground_truth,
            "unshuffled sample {i} does not lead with the ground truth"
        );
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "50 seeded runs took {elapsed:?}, budget is 10 s"
    );
    println!(
        "criterion 3: PASS ({samples_seen} samples over 50 seeds hold every invariant in {elapsed:?})"
    );
}

fn synthetic_tool(rng: &mut ChaCha8Rng) -> ToolSpec {
    let syllables = ["ver", "tool", "data", "flux", "port", "cast", "net", "form"];
    let mut name = String::new();
    for _ in 0..3 {
        name.push_str(syllables[rng.gen_range(0..syllables.len())]);
    }
    name.push_str(&rng.gen_range(0..10_000u32).to_string());
    ToolSpec {
        description: format!("Does something with {name}"),
        name,
        params: Vec::new(),
        demonstrations: Vec::new(),
        call_template: String::new(),
        related: Vec::new(),
        synthetic: true,
    }
}

#[test]
fn criterion_4_question_cache_is_symmetric_and_reused() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let a = synthetic_tool(&mut rng);
        let b = synthetic_tool(&mut rng);
        assert_eq!(
            VqCacheKey::new(&a, &b),
            VqCacheKey::new(&b, &a),
            "pair {i}: key changes under operand order"
        );
    }

    let tmp = tempfile::tempdir().expect("tempdir");
    let cache_path = tmp.path().join("questions.jsonl");
    let precompute_args = [
        "precompute-vq",
        "--registry",
        &fixture("fixtures/registry/pool17.json"),
        "--script",
        &fixture("fixtures/scripts/precompute.json"),
        "--vq-cache",
        cache_path.to_str().unwrap(),
    ];
    let first: Value =
        serde_json::from_str(&run_cli(&precompute_args)).expect("precompute output is JSON");
    assert_eq!(first["new"], 136, "17 tools make 136 unordered pairs");
    assert_eq!(first["total"], 136);
    let second: Value =
        serde_json::from_str(&run_cli(&precompute_args)).expect("precompute output is JSON");
    assert_eq!(second["new"], 0, "a warm cache generates nothing");
    assert_eq!(second["total"], 136);

    let registry = Registry::load(repo_path("fixtures/registry/pool17.json"))
        .expect("registry loads");
    let cache = VqCache::in_memory();
    let warmup = ScriptedBackend::new(load_rules("fixtures/scripts/precompute.json"))
        .expect("backend builds");
    assert_eq!(
        precompute_questions(&registry, &warmup, &cache).expect("precompute runs"),
        136
    );

    let pairs = [
        ("Current Air Pollution", "Forecast Air Pollution"),
        ("Search Cat Images", "List Cat Breeds"),
        ("Search Hotels", "Search Flights"),
    ];
    for (first, second) in pairs {
        let key = VqCacheKey::new(
            registry.require(first).expect("tool registered"),
            registry.require(second).expect("tool registered"),
        );
        let question = cache.get(&key).expect("question precomputed");
        let question_head: String = question.chars().take(40).collect();
        let backend = Arc::new(
            ScriptedBackend::new(vec![
                rule("Hint:", second),
                rule(&question_head, "The request fits the second capability."),
                rule_once("", first),
                rule("", second),
            ])
            .expect("backend builds"),
        );
        let router = BackendRouter::new(backend.clone());
        let candidates = CandidateSet::new(
            vec![first.to_string(), second.to_string()],
            None,
            false,
        )
        .expect("candidates valid");
        let trace = verified_select(
            "Pick the better capability for this request.",
            &candidates,
            &registry,
            &router,
            &cache,
            &SelectOptions::default(),
        )
        .expect("selection runs");
        assert_eq!(
            backend.calls_for(StageTag::VqGen),
            0,
            "warm-cache episode for {first}/{second} regenerated its question"
        );
        assert_eq!(trace.question, question);
        assert_eq!(trace.final_choice, second);
        assert_eq!(
            backend.tag_sequence(),
            vec![StageTag::Select, StageTag::Select, StageTag::VqAnswer, StageTag::Select]
        );
    }
    assert_eq!(cache.len(), 136, "episodes must not grow the cache");

    println!("criterion 4: PASS (1000 symmetric keys, 136 precomputed pairs, zero warm-cache generation calls)");
}

struct CallFamily {
    members: Vec<String>,
    canonical: CanonicalCall,
}

fn shuffled_query(pairs: &[(String, String)], rng: &mut ChaCha8Rng) -> String {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(rng);
    order
        .iter()
        .map(|&i| format!("{}={}", pairs[i].0, pairs[i].1))
        .collect::<Vec<_>>()
        .join("&")
}

fn build_family(index: usize, rng: &mut ChaCha8Rng) -> CallFamily {
    let paths = ["search", "weather/current", "v2/list", "quote", "homes", "pollution"];
    let base_url = format!(
        "https://api.host{}.example/{}",
        index % 37,
        paths[index % paths.len()]
    );

    let int_value = rng.gen_range(-5_000i64..5_000);
    let float_value = (rng.gen_range(-400_000i64..400_000) as f64) / 100.0;
    let words = ["New York", "Los Angeles", "San Juan", "cat pictures", "Audi Q7"];
    let text_value = words[rng.gen_range(0..words.len())];

    let canonical_pairs: Vec<(String, String)> = vec![
        ("id".into(), index.to_string()),
        ("count".into(), int_value.to_string()),
        ("lat".into(), format!("{float_value}")),
        ("q".into(), text_value.to_string()),
        ("mode".into(), "none".into()),
    ];

    let int_variant = |style: usize| match style {
        0 => format!("{int_value}.0"),
        1 => format!("{int_value}.00"),
        _ => int_value.to_string(),
    };
    let float_variant = |style: usize| match style {
        0 => format!("{float_value:.4}"),
        1 => format!("{float_value:+}"),
        _ => format!("{float_value}"),
    };
    let encoded_text = text_value.replace(' ', "%20");

    let mut members = Vec::new();
    for style in 0..5 {
        let q = match style {
            0 | 3 => text_value.to_string(),
            _ => encoded_text.clone(),
        };
        let mut pairs: Vec<(String, String)> = vec![
            ("id".into(), index.to_string()),
            ("count".into(), int_variant(style)),
            ("lat".into(), float_variant(style)),
            ("q".into(), q),
            ("mode".into(), "none".into()),
        ];
        if style % 2 == 1 {
            pairs.push(("appid".into(), "{API_KEY}".into()));
        }
        let query = shuffled_query(&pairs, rng);
        let url = format!("{base_url}?{query}");
        members.push(match style {
            0 => format!("curl -X GET '{url}'"),
            1 => format!("curl '{url}'"),
            2 => url,
            3 => format!("curl -X GET \"{url}\""),
            _ => url,
        });
    }

    CallFamily {
        members,
        canonical: CanonicalCall {
            method: "GET".into(),
            base_url,
            params: canonical_pairs.into_iter().collect(),
            auth_placeholder_stripped: false,
        },
    }
}

fn params_match_brute_force(a: &CanonicalCall, b: &CanonicalCall) -> bool {
    if a.method != b.method || a.base_url != b.base_url {
        return false;
    }
    let left: Vec<(&str, &str)> = a.params.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let right: Vec<(&str, &str)> = b.params.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    if left.len() != right.len() {
        return false;
    }
    left.iter()
        .all(|entry| right.iter().filter(|other| other == &entry).count() == 1)
}

#[test]
fn criterion_5_call_equivalence_is_an_equivalence_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let families: Vec<CallFamily> = (0..2000).map(|i| build_family(i, &mut rng)).collect();

    let parsed: Vec<Vec<CanonicalCall>> = families
        .iter()
        .map(|family| {
            family
                .members
                .iter()
                .map(|call| {
                    parse_call(call).unwrap_or_else(|e| panic!("`{call}` failed to parse: {e}"))
                })
                .collect()
        })
        .collect();
    let total: usize = parsed.iter().map(Vec::len).sum();
    assert_eq!(total, 10_000);

    for (f, family) in parsed.iter().enumerate() {
        for (i, call) in family.iter().enumerate() {
            assert!(
                calls_equivalent(call, call, NonePolicy::Strict),
                "family {f} member {i} is not equivalent to itself"
            );
            assert_eq!(
                call.params, families[f].canonical.params,
                "family {f} member {i} canonicalized differently"
            );
            for (j, other) in family.iter().enumerate().skip(i + 1) {
                assert!(
                    calls_equivalent(call, other, NonePolicy::Strict),
                    "family {f}: members {i} and {j} should be equivalent"
                );
                assert!(
                    calls_equivalent(other, call, NonePolicy::Strict),
                    "family {f}: equivalence of members {j} and {i} is asymmetric"
                );
                assert!(
                    params_match_brute_force(call, other),
                    "family {f}: members {i} and {j} disagree with the brute-force check"
                );
            }
        }
    }

    for _ in 0..2000 {
        let f = rng.gen_range(0..parsed.len());
        let g = loop {
            let g = rng.gen_range(0..parsed.len());
            if g != f {
                break g;
            }
        };
        let a = &parsed[f][rng.gen_range(0..5)];
        let b = &parsed[g][rng.gen_range(0..5)];
        assert!(
            !calls_equivalent(a, b, NonePolicy::Strict),
            "families {f} and {g} collide"
        );
        assert!(!params_match_brute_force(a, b));
    }

    for _ in 0..2000 {
        let f = rng.gen_range(0..parsed.len());
        let pick = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.8) {
                (f, rng.gen_range(0..5))
            } else {
                (rng.gen_range(0..parsed.len()), rng.gen_range(0..5))
            }
        };
        let (fa, ia) = pick(&mut rng);
        let (fb, ib) = pick(&mut rng);
        let (a, b, c) = (&parsed[fa][ia], &parsed[fb][ib], &parsed[f][0]);
        if calls_equivalent(a, b, NonePolicy::Strict) && calls_equivalent(b, c, NonePolicy::Strict) {
            assert!(
                calls_equivalent(a, c, NonePolicy::Strict),
                "transitivity breaks across families {fa}, {fb}, {f}"
            );
        }
    }

    let weather = parse_call(
        "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?lat=-37.3&lon=1.9&appid={API_KEY}&units=none&mode=none&lang=none'",
    )
    .expect("weather demonstration parses");
    let expected = CanonicalCall {
        method: "GET".into(),
        base_url: "https://api.openweathermap.org/data/2.5/weather".into(),
        params: [
            ("lat", "-37.3"),
            ("lon", "1.9"),
            ("units", "none"),
            ("mode", "none"),
            ("lang", "none"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect(),
        auth_placeholder_stripped: true,
    };
    assert_eq!(weather, expected);

    let with_none = parse_call("https://api.example.test/v1?q=cats&mode=none").unwrap();
    let without = parse_call("https://api.example.test/v1?q=cats").unwrap();
    assert!(!calls_equivalent(&with_none, &without, NonePolicy::Strict));
    assert!(calls_equivalent(&with_none, &without, NonePolicy::Lenient));

    let get = parse_call("curl -X GET 'https://api.example.test/v1?q=cats'").unwrap();
    let post = parse_call("curl -X POST 'https://api.example.test/v1?q=cats'").unwrap();
    assert_eq!(post.method, "POST");
    assert!(!calls_equivalent(&get, &post, NonePolicy::Strict));

    println!("criterion 5: PASS (10000 calls canonicalize consistently and match the brute-force comparison)");
}

fn episode_tool() -> ToolSpec {
    let param = |name: &str, kind: ParamKind, required: bool| ParamSpec {
        name: name.to_string(),
        description: format!("value for {name}"),
        kind,
        required,
        none_token: "none".to_string(),
    };
    ToolSpec {
        name: "Record Updater".to_string(),
        description: "Updates one record with the given fields".to_string(),
        params: vec![
            param("alpha", ParamKind::String, true),
            param("beta", ParamKind::Number, false),
            param("gamma", ParamKind::String, false),
        ],
        demonstrations: Vec::new(),
        call_template: String::new(),
        related: Vec::new(),
        synthetic: false,
    }
}

#[test]
fn criterion_6_parameter_verdicts_settle_within_predictions() {
    let tool = episode_tool();

    let agree_backend = Arc::new(
        ScriptedBackend::new(vec![
            rule_regex(r"(?s)INS:.*\[/INST\]", "alpha: seven\nbeta: 7\ngamma: blue"),
            rule("INS:", "alpha: seven\nbeta: 7\ngamma: blue"),
        ])
        .expect("backend builds"),
    );
    let router = BackendRouter::new(agree_backend.clone());
    let set = predict_parameters("Set alpha to seven.", &tool, &router, 0, true)
        .expect("prediction runs");
    assert_eq!(
        agree_backend.calls_for(StageTag::ParamVerify),
        0,
        "agreement must not issue verification traffic"
    );
    for prediction in &set.predictions {
        assert_eq!(prediction.verdict, Verdict::Agree);
        assert_eq!(prediction.final_value, prediction.primary_value);
    }

    let registry = Registry::load(repo_path("fixtures/registry/pool17.json"))
        .expect("registry loads");
    let hotels = registry.require("Search Hotels").expect("tool registered");
    let hotel_backend = Arc::new(
        ScriptedBackend::new(vec![
            rule("for \"min-price\"", "None"),
            rule_regex(
                r"(?s)INS:.*\[/INST\]",
                "location: San Francisco\ncheckin: 2023-10-20\ncheckout: 2023-10-23\nmin-price: 100\nmax-price: 250",
            ),
            rule(
                "INS:",
                "location: San Francisco\ncheckin: 2023-10-20\ncheckout: 2023-10-23\nmin-price: 0\nmax-price: 250",
            ),
        ])
        .expect("backend builds"),
    );
    let router = BackendRouter::new(hotel_backend.clone());
    let set = predict_parameters(
        "Book me a hotel in San Francisco from October 20 to 23. I can pay at most 250 dollars a night.",
        hotels,
        &router,
        3,
        true,
    )
    .expect("prediction runs");
    let min_price = set
        .predictions
        .iter()
        .find(|p| p.param == "min-price")
        .expect("min-price settled");
    assert_eq!(min_price.verdict, Verdict::None);
    assert_eq!(min_price.final_value, "none");
    assert_eq!(hotel_backend.calls_for(StageTag::ParamVerify), 1);
    for prediction in set.predictions.iter().filter(|p| p.param != "min-price") {
        assert_eq!(prediction.verdict, Verdict::Agree, "{}", prediction.param);
    }

    let value_pool = ["red", "blue", "42", "7.5", "none", "left", "right"];
    let verdict_pool = ["[a]", "[b]", "[A]", "[ b ]", "None", "none of these fit", "no idea"];
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for episode in 0..1000 {
        let pick = |rng: &mut ChaCha8Rng| value_pool[rng.gen_range(0..value_pool.len())];
        let mut primary_lines = Vec::new();
        let mut secondary_lines = Vec::new();
        let mut rules = Vec::new();
        for (pi, spec) in tool.params.iter().enumerate() {
            let primary = pick(&mut rng);
            let secondary = if rng.gen_bool(0.4) { primary } else { pick(&mut rng) };
            if pi == 0 || rng.gen_bool(0.9) {
                primary_lines.push(format!("{}: {primary}", spec.name));
            }
            if pi == 0 || rng.gen_bool(0.9) {
                secondary_lines.push(format!("{}: {secondary}", spec.name));
            }
            rules.push(rule(
                &format!("for \"{}\"", spec.name),
                verdict_pool[rng.gen_range(0..verdict_pool.len())],
            ));
        }
        rules.push(rule_regex(r"(?s)INS:.*\[/INST\]", &secondary_lines.join("\n")));
        rules.push(rule("INS:", &primary_lines.join("\n")));
        let backend = Arc::new(ScriptedBackend::new(rules).expect("backend builds"));
        let router = BackendRouter::new(backend.clone());
        let set = predict_parameters(
            &format!("Update the record, request {episode}."),
            &tool,
            &router,
            0,
            true,
        )
        .expect("prediction runs");
        assert_eq!(set.predictions.len(), tool.params.len());
        for prediction in &set.predictions {
            let settled = prediction.final_value == prediction.primary_value
                || prediction.final_value == prediction.secondary_value
                || prediction.final_value == "none";
            assert!(
                settled,
                "episode {episode}: `{}` settled on `{}` outside {{`{}`, `{}`, none}}",
                prediction.param,
                prediction.final_value,
                prediction.primary_value,
                prediction.secondary_value
            );
        }
    }

    println!("criterion 6: PASS (agreement short-circuits, stated maximums yield the none token, 1000 episodes settle in range)");
}

#[test]
fn criterion_7_identical_seeds_reproduce_identical_artifacts() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let run_twice = |label: &str, args_for: &dyn Fn(&Path) -> Vec<String>| {
        let mut outputs = Vec::new();
        for round in 0..2 {
            let dir = tmp.path().join(format!("{label}{round}"));
            std::fs::create_dir_all(&dir).expect("round dir");
            let args = args_for(&dir);
            let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let stdout = run_cli(&arg_refs);
            let mut files: Vec<PathBuf> = walk_files(&dir);
            files.sort();
            let payload: Vec<(String, Vec<u8>)> = files
                .into_iter()
                .map(|f| {
                    let rel = f.strip_prefix(&dir).unwrap().to_string_lossy().into_owned();
                    (rel, read_bytes(&f))
                })
                .collect();
            outputs.push((stdout, payload));
        }
        assert_eq!(
            outputs[0].0, outputs[1].0,
            "{label}: stdout differs between identical runs"
        );
        let names0: Vec<&String> = outputs[0].1.iter().map(|(n, _)| n).collect();
        let names1: Vec<&String> = outputs[1].1.iter().map(|(n, _)| n).collect();
        assert_eq!(names0, names1, "{label}: artifact sets differ");
        for ((name, bytes0), (_, bytes1)) in outputs[0].1.iter().zip(&outputs[1].1) {
            assert!(
                bytes0 == bytes1,
                "{label}: artifact {name} differs between identical runs"
            );
        }
    };

    run_twice("call", &|dir| {
        vec![
            "call".into(),
            "--registry".into(),
            fixture("fixtures/registry/cardealer.json"),
            "--script".into(),
            fixture("fixtures/scripts/cardealer.json"),
            "--instruction".into(),
            CAR_INSTRUCTION.into(),
            "--transcripts".into(),
            dir.join("transcripts").to_string_lossy().into_owned(),
        ]
    });

    run_twice("eval", &|dir| {
        vec![
            "eval".into(),
            "--registry".into(),
            fixture("fixtures/registry/pool17.json"),
            "--script".into(),
            fixture("fixtures/scripts/minitask.json"),
            "--task".into(),
            fixture("fixtures/tasks/minitask.jsonl"),
            "--sweep".into(),
            "--report-out".into(),
            dir.join("report.json").to_string_lossy().into_owned(),
        ]
    });

    run_twice("datagen", &|dir| {
        vec![
            "datagen".into(),
            "--script".into(),
            fixture("fixtures/scripts/datagen.json"),
            "--rounds".into(),
            "1".into(),
            "--per-round".into(),
            "2".into(),
            "--library-seed".into(),
            "7".into(),
            "--seed".into(),
            "7".into(),
            "--hard-ratio".into(),
            "0.2".into(),
            "--k".into(),
            "7".into(),
            "--max-note-tokens".into(),
            "64".into(),
            "--out".into(),
            dir.join("corpus.jsonl").to_string_lossy().into_owned(),
            "--stats-out".into(),
            dir.join("stats.json").to_string_lossy().into_owned(),
            "--registry-out".into(),
            dir.join("registry.json").to_string_lossy().into_owned(),
        ]
    });

    run_twice("precompute", &|dir| {
        vec![
            "precompute-vq".into(),
            "--registry".into(),
            fixture("fixtures/registry/pool17.json"),
            "--script".into(),
            fixture("fixtures/scripts/precompute.json"),
            "--vq-cache".into(),
            dir.join("questions.jsonl").to_string_lossy().into_owned(),
        ]
    });

    assert_matches_golden(
        &tmp.path().join("datagen0/corpus.jsonl"),
        "fixtures/golden/datagen_corpus.jsonl",
    );
    assert_matches_golden(
        &tmp.path().join("datagen0/stats.json"),
        "fixtures/golden/datagen_stats.json",
    );
    assert_matches_golden(
        &tmp.path().join("datagen0/registry.json"),
        "fixtures/golden/datagen_registry.json",
    );

    println!("criterion 7: PASS (call, eval, datagen, and precompute artifacts are byte-identical across reruns)");
}

fn walk_files(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).expect("directory readable") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files
}
