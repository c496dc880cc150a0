// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance checks. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lingualens::data_io::datasets::{load_annotations, load_facts, load_insight, load_lexicon, save_annotations};
use lingualens::data_io::report::{read_report, Report};
use lingualens::data_io::{
    render_lens_svg, render_routing_bars, render_trace_svg, save_facts, save_insight, save_lexicon,
    LensRenderOptions,
};
use lingualens::error::Error;
use lingualens::interpolation::{interpolate_state, interpolation_point, clean_traces, Host, InterpolationSpec, LanguageLexicons};
use lingualens::lens::lens_grid;
use lingualens::model::{forward, generate, load_bundle, Intervention, ModelBundle, PositionSet, TOY_WORDS};
use lingualens::rng::{tag, CounterRng};
use lingualens::routing::{routing_report, AnnotatedGrid, Segmenter};
use lingualens::steering::{
    build_steering_vector, cosine_profile, evaluate_steering, nudged_similarity, steer_generate, ExtractionRule, Steer,
    SteeringVector,
};
use lingualens::tracing::{
    default_sigma, ensure_corrupted, trace_grid, trace_seeds, FactProbe, TraceConfig,
    DEFAULT_MAX_ATTEMPTS, DEFAULT_THRESHOLD_RATIO,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:?}, limit {limit:?}"))
}

/// Prompt of 1..=max_words toy words drawn from `seed`.
fn random_prompt(seed: u64, max_words: usize) -> String {
    let rng = CounterRng::new(seed, tag("acceptance-prompt"));
    let n = 1 + (rng.bits(0) % max_words as u64) as usize;
    (0..n)
        .map(|i| TOY_WORDS[(rng.bits(1 + i as u64) % TOY_WORDS.len() as u64) as usize])
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------

fn c1_forward_oracle() -> Check {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for seed in 0..50u64 {
        let b = common::random_bundle(seed);
        let ids = b.tokenize(&random_prompt(seed, 10)).ids;
        let fast = forward(&b, &ids, &[]).map_err(|e| e.to_string())?;
        let (states, logits) = common::naive_forward(&b, &ids);
        for t in 0..ids.len() {
            worst = worst.max(common::max_abs_diff(fast.logits(t), &logits[t]));
            for (l, layer) in states.iter().enumerate() {
                worst = worst.max(common::max_abs_diff(fast.state(l, t), &layer[t]));
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max abs diff {worst:e}"))?;
    within(start, Duration::from_secs(10))?;
    Ok(format!("50 pairs, max abs diff {worst:.2e}"))
}

fn c2_lens_final_row() -> Check {
    let start = Instant::now();
    for seed in 0..20u64 {
        let b = common::random_bundle(100 + seed);
        let g = generate(&b, &random_prompt(seed, 6), 8, &[]).map_err(|e| e.to_string())?;
        let grid = lens_grid(&b, &g, 3).map_err(|e| e.to_string())?;
        let top: Vec<u32> = grid.rows[b.n_layers()].iter().map(|c| c.top[0].id).collect();
        ensure(top == g.generated.ids, || format!("seed {seed}: {top:?} vs {:?}", g.generated.ids))?;
    }
    within(start, Duration::from_secs(5))?;
    Ok("20 generations".into())
}

fn fact_probes(b: &ModelBundle) -> Vec<FactProbe> {
    [
        "The capital of Canada is",
        "The city of Canada is",
        "capital of Canada",
        "la capitale du Canada est",
        "de hoofdstad van Canada is",
        "the city in Canada is",
        "Le capitale du Canada est",
        "the capital of Canada is",
        "The lake of Canada is",
        "hoofdstad van Canada",
    ]
    .iter()
    .map(|p| common::probe(b, p, " Canada", " Ottawa"))
    .collect()
}

fn c3_trace_cells() -> Check {
    let start = Instant::now();
    let b = common::planted_bundle();
    let config = TraceConfig::default();
    let mut worst = 0.0_f64;
    for probe in fact_probes(&b) {
        let grid = trace_grid(&b, &probe, &config).map_err(|e| format!("{:?}: {e}", probe.prompt))?;
        ensure(grid.n_seeds == 10, || "seed count".into())?;
        let last = probe.tokens.len() - 1;
        let gap = grid.p_clean - grid.p_corrupted_mean;
        worst = worst.max((grid.aie[b.n_layers()][last] - gap).abs());
        for p in (0..probe.tokens.len()).filter(|p| !probe.subject_span.contains(p)) {
            ensure(grid.aie[0][p] == 0.0, || format!("{:?}: aie[0][{p}] = {}", probe.prompt, grid.aie[0][p]))?;
        }
    }
    ensure(worst <= 1e-9, || format!("aie[L][last] off by {worst:e}"))?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("10 probes x 10 seeds, max gap error {worst:.1e}"))
}

fn c4_corruption() -> Check {
    let b = common::planted_bundle();
    let mut probes = fact_probes(&b);
    // Subject right at the end: the clean run is saturated and noise
    // cannot push it under the threshold.
    probes.push(common::probe(&b, "in Canada", " Canada", " Ottawa"));
    let (mut ok, mut refused) = (0, 0);
    for probe in &probes {
        for base in [0u64, 7] {
            let seeds = trace_seeds(base, 10);
            let run = || {
                ensure_corrupted(
                    &b,
                    probe,
                    default_sigma(&b),
                    DEFAULT_THRESHOLD_RATIO,
                    DEFAULT_MAX_ATTEMPTS,
                    &seeds,
                )
            };
            let (first, second) = (run(), run());
            match (&first, &second) {
                (Ok(a), Ok(c)) => {
                    ensure(a == c, || format!("{:?}: nondeterministic corruption", probe.prompt))?;
                    ensure(a.p_corrupted.iter().all(|&p| p < 0.2 * a.p_clean), || {
                        format!("{:?}: threshold not met", probe.prompt)
                    })?;
                    ok += 1;
                }
                (Err(Error::InsufficientCorruption { .. }), Err(Error::InsufficientCorruption { .. })) => {
                    ensure(first.unwrap_err().to_string() == second.unwrap_err().to_string(), || {
                        "nondeterministic error".into()
                    })?;
                    refused += 1;
                }
                _ => return Err(format!("{:?}: unexpected outcome {first:?}", probe.prompt)),
            }
        }
    }
    ensure(refused > 0 && ok > 0, || format!("expected both outcomes, got {ok} ok / {refused} refused"))?;
    Ok(format!("{ok} corrupted, {refused} documented refusals"))
}

fn animal_vector(b: &ModelBundle) -> Result<(SteeringVector, Vec<String>, Vec<String>), String> {
    let ds = load_insight(common::fixture("insight.json")).map_err(|e| e.to_string())?;
    let entry = ds.entry("animal").ok_or("no animal entry")?;
    let pos = entry.languages["en"].sentences.clone();
    let neg = ds.negatives(entry, "en").map_err(|e| e.to_string())?;
    let v = build_steering_vector(b, "animal", "en", &pos, &neg, ExtractionRule::FinalPosition)
        .map_err(|e| e.to_string())?;
    Ok((v, pos, neg))
}

fn c5_steering_identities() -> Check {
    let start = Instant::now();
    let b = common::toy_bundle(9);
    let (v, pos, neg) = animal_vector(&b)?;
    for rule in [ExtractionRule::FinalPosition, ExtractionRule::MeanOverPositions] {
        let ab = build_steering_vector(&b, "x", "en", &pos, &neg, rule).map_err(|e| e.to_string())?;
        let ba = build_steering_vector(&b, "x", "en", &neg, &pos, rule).map_err(|e| e.to_string())?;
        for (x, y) in ab.per_layer.iter().flatten().zip(ba.per_layer.iter().flatten()) {
            ensure(*x == -*y, || format!("antisymmetry broken: {x} vs {y}"))?;
        }
    }
    for prompt in ["They adopted a", "The lake", "Ze telen hun eigen"] {
        for layer in 0..=b.n_layers() {
            let plain = generate(&b, prompt, 8, &[]).map_err(|e| e.to_string())?;
            let steered = steer_generate(&b, prompt, Steer { vector: &v, layer, gamma: 0.0 }, None, 8)
                .map_err(|e| e.to_string())?;
            ensure(plain.generated.ids == steered.generated.ids && plain.text == steered.text, || {
                format!("gamma 0 changed output at layer {layer}")
            })?;
            for p in 0..plain.trace.seq_len() {
                ensure(plain.trace.logits(p) == steered.trace.logits(p), || "gamma 0 changed logits".into())?;
            }
        }
    }
    let ids = b.tokenize("They adopted a").ids;
    let add = |layer: usize, gamma: f64| Intervention::AddVector {
        layer,
        positions: PositionSet::From(0),
        vector: v.per_layer[layer].clone(),
        gamma,
    };
    let mut worst = 0.0_f64;
    for layer in 0..=b.n_layers() {
        let split = forward(&b, &ids, &[add(layer, 2.0), add(layer, 3.0)]).map_err(|e| e.to_string())?;
        let once = forward(&b, &ids, &[add(layer, 5.0)]).map_err(|e| e.to_string())?;
        for l in 0..=b.n_layers() {
            for p in 0..ids.len() {
                worst = worst.max(common::max_abs_diff(split.state(l, p), once.state(l, p)));
            }
        }
    }
    ensure(worst <= 1e-6, || format!("composition diff {worst:e}"))?;
    within(start, Duration::from_secs(10))?;
    Ok(format!("composition diff {worst:.1e}"))
}

/// (text, targets, present, collapsed), labeled by hand.
const STEERING_CORPUS: [(&str, &[&str], bool, bool); 20] = [
    ("They adopted an animal from the shelter.", &["animal"], true, false),
    ("The Animal, it was said, slept.", &["animal"], true, false),
    ("Ze kochten een dier voor de kinderen", &["dier"], true, false),
    ("le chat dort sur le lit", &["chat"], true, false),
    ("A dog and a cat played in the garden", &["cat", "kat"], true, false),
    ("They adopted a puppy from the shelter.", &["animal"], false, false),
    ("The animals slept in the barn", &["animal"], false, false),
    ("Ze kochten een boek", &["dier"], false, false),
    ("", &["animal"], false, false),
    ("chatter is loud today", &["chat"], false, false),
    ("animal animal animal animal", &["animal"], true, true),
    ("the cat the cat the cat the cat", &["cat"], true, true),
    ("I saw an animal and then I saw I saw I saw I saw", &["animal"], true, true),
    ("dier een dier een dier een dier een", &["dier"], true, true),
    ("animal x y x y animal x y x y animal x y x y animal", &["animal"], true, true),
    ("the the the the", &["animal"], false, true),
    ("dog dog dog dog dog", &["cat"], false, true),
    ("de kat de kat de kat de kat", &["dier"], false, true),
    ("a b c a b c a b c a b c", &["animal"], false, true),
    ("le le le le chien", &["chat"], false, true),
];

fn c6_steering_table() -> Check {
    let seg = Segmenter::Whitespace;
    let mut correct = 0;
    for (text, targets, present, collapsed) in STEERING_CORPUS {
        let forms: Vec<String> = targets.iter().map(|s| s.to_string()).collect();
        let o = evaluate_steering(text, &forms, &seg).map_err(|e| e.to_string())?;
        if o.target_form_found.is_some() == present && o.collapsed == collapsed && o.success == (present && !collapsed) {
            correct += 1;
        } else {
            eprintln!("  mislabeled: {text:?} -> {o:?}");
        }
    }
    ensure(correct == 20, || format!("{correct}/20"))?;
    Ok("20/20".into())
}

fn c7_geometry() -> Check {
    let b = common::toy_bundle(9);
    let (v, _, _) = animal_vector(&b)?;
    let ds = load_insight(common::fixture("insight.json")).map_err(|e| e.to_string())?;
    let entry = ds.entry("animal").ok_or("no animal")?;
    let w = build_steering_vector(
        &b,
        "animal",
        "nl",
        &entry.languages["nl"].sentences,
        &ds.negatives(entry, "nl").map_err(|e| e.to_string())?,
        ExtractionRule::FinalPosition,
    )
    .map_err(|e| e.to_string())?;
    let mut worst = 0.0_f64;
    for c in cosine_profile(&v, &v).map_err(|e| e.to_string())? {
        worst = worst.max((c.ok_or("zero row")? - 1.0).abs());
    }
    let delta = SteeringVector {
        per_layer: w.per_layer.iter().zip(&v.per_layer).map(|(b, a)| b.iter().zip(a).map(|(x, y)| x - y).collect()).collect(),
        ..w.clone()
    };
    for c in nudged_similarity(&v, &w, &delta, 1.0).map_err(|e| e.to_string())? {
        worst = worst.max((c.ok_or("zero row")? - 1.0).abs());
    }
    ensure(worst <= 1e-9, || format!("off by {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn c8_routing() -> Check {
    let (grid, words) = common::routing_fixture();
    let lex = common::routing_lexicon();
    let r = routing_report(&[AnnotatedGrid { grid: &grid, words: &words }], &lex, 0..=3).map_err(|e| e.to_string())?;
    ensure(r.overall.n_words == 10 && r.overall.n_routed == 6 && r.overall.n_homograph == 1, || {
        format!("counts {:?}", r.overall)
    })?;
    ensure(r.overall.proportion == 0.6, || format!("proportion {}", r.overall.proportion))?;
    ensure(r.overall.std_error == 0.024_f64.sqrt(), || format!("std error {}", r.overall.std_error))?;
    let sum = |f: fn(&lingualens::routing::RoutingCounts) -> usize| r.per_pos.values().map(f).sum::<usize>();
    ensure(
        sum(|c| c.n_words) == 10 && sum(|c| c.n_routed) == 6 && sum(|c| c.n_homograph) == 1,
        || "per-POS sums differ from overall".into(),
    )?;
    Ok(format!("({}, {})", r.overall.proportion, r.overall.std_error))
}

const PROMPT_PAIRS: [(&str, &str); 10] = [
    ("The capital of Canada is", "De hoofdstad van Canada is"),
    ("The lake", "Le lac"),
    ("The sun is", "Die Sonne ist"),
    ("They adopted a", "Ze telen hun eigen"),
    ("the boat sailed", "le bateau naviguait"),
    ("The cat", "de kat"),
    ("love and hate", "liefde en haat"),
    ("The capital of France is", "La capitale de la France est"),
    ("water", "eau"),
    ("The city of Berlin", "Die Hauptstadt von Germany"),
];

fn c9_interpolation() -> Check {
    let b = common::planted_bundle();
    let seg = Segmenter::Whitespace;
    let mut lex = LanguageLexicons::new();
    lex.insert("en".into(), ["the", "is", "capital"].iter().map(|s| s.to_string()).collect());
    lex.insert("nl".into(), ["de", "het", "hoofdstad"].iter().map(|s| s.to_string()).collect());
    let mut worst = 0.0_f64;
    for (i, (pa, pb)) in PROMPT_PAIRS.iter().enumerate() {
        let layer = i % (b.n_layers() + 1);
        for host in [Host::A, Host::B] {
            let spec = InterpolationSpec {
                prompt_a: pa.to_string(),
                prompt_b: pb.to_string(),
                layer,
                alphas: vec![0.0, 1.0],
                host,
                answer_sets: BTreeMap::from([("en".to_string(), vec!["Ottawa".to_string()])]),
                instruction_prefix: None,
            };
            let (ta, tb) = clean_traces(&b, &spec).map_err(|e| e.to_string())?;
            let (alpha, prompt) = match host {
                Host::A => (1.0, pa),
                Host::B => (0.0, pb),
            };
            let point = interpolation_point(&b, &spec, (&ta, &tb), alpha, &lex, &seg, 6).map_err(|e| e.to_string())?;
            let plain = generate(&b, prompt, 6, &[]).map_err(|e| e.to_string())?;
            ensure(point.generated_ids == plain.generated.ids && point.output_text == plain.text, || {
                format!("pair {i} host {host:?}: patched run differs")
            })?;
            let (ha, hb) = (ta.state(layer, ta.seq_len() - 1), tb.state(layer, tb.seq_len() - 1));
            for k in 0..=8 {
                let a = k as f64 / 8.0;
                let s = interpolate_state(&ta, &tb, layer, a).map_err(|e| e.to_string())?;
                let want: Vec<f64> = ha.iter().zip(hb).map(|(x, y)| a * x + (1.0 - a) * y).collect();
                worst = worst.max(common::max_abs_diff(&s, &want));
            }
        }
    }
    ensure(worst <= 1e-6, || format!("affine error {worst:e}"))?;
    Ok(format!("10 pairs, affine error {worst:.1e}"))
}

fn c10_formats() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rt = |name: &str, save: &dyn Fn(&Path) -> lingualens::error::Result<()>| -> Result<(), String> {
        let out = tmp.path().join(name);
        save(&out).map_err(|e| e.to_string())?;
        let (a, b) = (std::fs::read(common::fixture(name)).unwrap(), std::fs::read(&out).unwrap());
        ensure(a == b, || format!("{name} not byte-identical after round trip"))
    };
    let insight = load_insight(common::fixture("insight.json")).map_err(|e| e.to_string())?;
    rt("insight.json", &|p| save_insight(p, &insight))?;
    let facts = load_facts(common::fixture("facts.json")).map_err(|e| e.to_string())?;
    rt("facts.json", &|p| save_facts(p, &facts))?;
    let lex = load_lexicon(common::fixture("lexicon_fr.json")).map_err(|e| e.to_string())?;
    rt("lexicon_fr.json", &|p| save_lexicon(p, &lex))?;
    let report = read_report(common::fixture("generation_report.json")).map_err(|e| e.to_string())?;
    rt("generation_report.json", &|p| lingualens::data_io::write_report(&report, p))?;

    let b = common::planted_bundle();
    b.save(tmp.path().join("b1")).map_err(|e| e.to_string())?;
    let back = load_bundle(tmp.path().join("b1")).map_err(|e| e.to_string())?;
    back.save(tmp.path().join("b2")).map_err(|e| e.to_string())?;
    ensure(back.hash() == b.hash(), || "bundle hash changed".into())?;
    for f in ["config.json", "vocab.json", "weights.bin"] {
        let (x, y) = (std::fs::read(tmp.path().join("b1").join(f)), std::fs::read(tmp.path().join("b2").join(f)));
        ensure(x.unwrap() == y.unwrap(), || format!("bundle {f} differs"))?;
    }

    let n = common::check_malformed_corpus()?;
    ensure(n >= 12, || format!("only {n} malformed fixtures"))?;

    let g = generate(&b, "The capital of Canada is", 6, &[]).map_err(|e| e.to_string())?;
    let grid = lens_grid(&b, &g, 3).map_err(|e| e.to_string())?;
    let opts = LensRenderOptions {
        title: "lens".into(),
        english: lex.english_forms(),
        ..Default::default()
    };
    let probe = common::probe(&b, "The capital of Canada is", " Canada", " Ottawa");
    let tgrid = trace_grid(&b, &probe, &TraceConfig { n_seeds: 3, ..Default::default() }).map_err(|e| e.to_string())?;
    let (rgrid, words) = common::routing_fixture();
    let rr = routing_report(&[AnnotatedGrid { grid: &rgrid, words: &words }], &common::routing_lexicon(), 0..=3)
        .map_err(|e| e.to_string())?;
    for _ in 0..2 {
        ensure(render_lens_svg(&grid, &opts).unwrap() == render_lens_svg(&grid.clone(), &opts.clone()).unwrap(), || {
            "lens svg differs".into()
        })?;
        ensure(render_trace_svg(&tgrid, "t").unwrap() == render_trace_svg(&tgrid.clone(), "t").unwrap(), || {
            "trace svg differs".into()
        })?;
        ensure(render_routing_bars(&rr, "r").unwrap() == render_routing_bars(&rr.clone(), "r").unwrap(), || {
            "routing svg differs".into()
        })?;
    }
    Ok(format!("4 datasets/reports, bundle, {n} malformed fixtures, 3 figures"))
}

// ---------------------------------------------------------------------------
// CLI determinism
// ---------------------------------------------------------------------------

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lingualens"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

/// Rerun the report's recorded command into `dir2` and compare bytes.
fn replay(report: &Path, dir2: &Path) -> Result<(), String> {
    let r: Report = read_report(report).map_err(|e| e.to_string())?;
    let mut argv: Vec<&str> = vec![r.metadata.command.as_str()];
    argv.extend(r.metadata.args.iter().map(String::as_str));
    let dir2s = dir2.to_str().unwrap();
    argv.extend(["--out", dir2s]);
    cli(&argv)?;
    let name = report.file_name().unwrap();
    let (a, b) = (std::fs::read(report).unwrap(), std::fs::read(dir2.join(name)).unwrap());
    ensure(a == b, || format!("{} differs on replay", r.metadata.command))?;
    let svg = report.with_extension("svg");
    if svg.exists() {
        let again = std::fs::read(dir2.join(svg.file_name().unwrap())).unwrap();
        ensure(std::fs::read(&svg).unwrap() == again, || format!("{} figure differs", r.metadata.command))?;
    }
    Ok(())
}

fn c11_cli_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_owned();
    let fx = |s: &str| common::fixture(s).to_str().unwrap().to_owned();
    let (bundle, out) = (p("bundle"), p("out"));
    cli(&["make-toy", "--out", &bundle, "--fact", "Canada=Ottawa"])?;
    replay(&tmp.path().join("bundle/make-toy.json"), &tmp.path().join("bundle2"))?;
    for f in ["config.json", "vocab.json", "weights.bin"] {
        let same = std::fs::read(tmp.path().join("bundle").join(f)).unwrap()
            == std::fs::read(tmp.path().join("bundle2").join(f)).unwrap();
        ensure(same, || format!("bundle {f} differs on replay"))?;
    }

    let b = load_bundle(&bundle).map_err(|e| e.to_string())?;
    let ann = common::annotations_for(&b, &["Le bateau", "The lake"], 6);
    save_annotations(tmp.path().join("ann.json"), &ann).map_err(|e| e.to_string())?;
    load_annotations(tmp.path().join("ann.json")).map_err(|e| e.to_string())?;

    let runs: Vec<Vec<String>> = [
        vec!["generate", "--bundle", &bundle, "--prompt", "The lake", "--steps", "6"],
        vec!["lens", "--bundle", &bundle, "--prompt", "Le bateau", "--steps", "6", "--k", "3", "--lexicon", &fx("lexicon_fr.json")],
        vec!["trace", "--bundle", &bundle, "--prompt", "The capital of Canada is", "--subject", "Canada", "--answer", "Ottawa", "--seeds", "4"],
        vec!["steer", "--bundle", &bundle, "--prompt", "They adopted a", "--insight", &fx("insight.json"), "--word", "animal", "--steer-lang", "nl", "--steps", "6"],
        vec!["steer-sweep", "--bundle", &bundle, "--insight", &fx("insight.json"), "--word", "animal", "--gammas", "1,5", "--steps", "4"],
        vec!["geometry", "--bundle", &bundle, "--insight", &fx("insight.json"), "--word", "animal", "--lang-a", "en", "--lang-b", "nl", "--beta", "1"],
        vec!["route-stats", "--bundle", &bundle, "--annotations", &p("ann.json"), "--lexicon", &fx("lexicon_fr.json")],
        vec!["interpolate", "--bundle", &bundle, "--facts", &fx("facts.json"), "--fact-id", "canada", "--layer", "2", "--steps", "4"],
    ]
    .iter()
    .map(|v| v.iter().map(|s| s.to_string()).collect())
    .collect();
    for (i, argv) in runs.iter().enumerate() {
        let dir = format!("{out}{i}");
        let mut full: Vec<&str> = argv.iter().map(String::as_str).collect();
        full.extend(["--out", &dir]);
        cli(&full)?;
        replay(&Path::new(&dir).join(format!("{}.json", argv[0])), &tmp.path().join(format!("replay{i}")))?;
    }
    Ok(format!("{} subcommands replayed", runs.len() + 1))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("1 forward oracle", c1_forward_oracle),
        ("2 lens final-row identity", c2_lens_final_row),
        ("3 tracing analytic cells", c3_trace_cells),
        ("4 corruption threshold", c4_corruption),
        ("5 steering identities", c5_steering_identities),
        ("6 steering evaluation table", c6_steering_table),
        ("7 geometry", c7_geometry),
        ("8 routing fixture", c8_routing),
        ("9 interpolation endpoints", c9_interpolation),
        ("10 formats", c10_formats),
        ("11 end-to-end determinism", c11_cli_determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let start = Instant::now();
        match f() {
            Ok(detail) => println!("PASS criterion {name}: {detail} ({:.2?})", start.elapsed()),
            Err(why) => {
                println!("FAIL criterion {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
