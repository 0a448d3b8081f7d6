//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use screenref::corpus::{generate_corpus, Corpus, CorpusReport, GeneratorConfig};
use screenref::eval::{evaluate, report_ablation, CategoryOracle, MetricsReport, NoTextOracle};
use screenref::features::{default_stopwords, location_features, LOC_DIM, TEXT_DIM};
use screenref::heuristic::{HeuristicResolver, KeywordLexicon};
use screenref::io::to_ndjson;
use screenref::screen::{BBox, Entity, EntityCategory, OcrText, Sample, Screen, Subset};
use screenref::srr::{argmax_id, category_tokens, CandidateInputs, Model, ModelConfig, Params, SampleInputs};
use screenref::train::{ablate, loss, loss_and_grad, module_subsets, train, Example, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Written straight to stderr so the lines survive output capture.
fn report(id: usize, name: &str, o: &Outcome, took: Duration) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {id:>2} [{verdict}] {name}: {} ({:.1}s)",
        o.detail,
        took.as_secs_f64()
    );
}

// ---------------------------------------------------------------- 1

fn random_inputs(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> SampleInputs {
    let n_tok = rng.gen_range(1..7);
    let n_cand = rng.gen_range(2..6);
    SampleInputs {
        tokens: (0..n_tok).map(|_| rng.gen_range(0..cfg.vocab_buckets)).collect(),
        candidates: (0..n_cand)
            .map(|i| CandidateInputs {
                id: i as u32,
                category: rng.gen_range(0..5),
                loc: (0..LOC_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                text: (0..TEXT_DIM).map(|_| rng.gen_range(0.0..1.0)).collect(),
            })
            .collect(),
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let masks = [[true; 3], [true, true, false], [false, true, true], [true, false, true], [false, false, true]];
    let mut worst = 0.0f64;
    for batch_no in 0..10 {
        let cfg = ModelConfig {
            vocab_buckets: 40,
            embed_dim: 8,
            hidden_dim: 6,
            attention_dim: 5,
            module_mask: masks[batch_no % masks.len()],
            ..ModelConfig::default()
        };
        let mut p: Params<f64> = Params::init(&mut rng, &cfg);
        p.embed.iter_mut().for_each(|x| *x *= 5.0);
        let cat_tokens = category_tokens(&cfg);
        let inputs: Vec<SampleInputs> = (0..5).map(|_| random_inputs(&mut rng, &cfg)).collect();
        let pairs: Vec<Vec<(usize, bool)>> = inputs
            .iter()
            .map(|i| (0..3).map(|_| (rng.gen_range(0..i.candidates.len()), rng.gen_bool(0.5))).collect())
            .collect();
        let batch: Vec<Example<'_>> = inputs
            .iter()
            .zip(&pairs)
            .map(|(i, pr)| Example { inputs: i, pairs: pr, tag: rng.gen_bool(0.6).then(|| rng.gen_range(0..3)) })
            .collect();
        let lambda = 0.5;
        let (_, g) = loss_and_grad(&p, &cfg, &cat_tokens, &batch, lambda);
        let mut analytic = vec![g.embed_dense(&cfg)];
        analytic.extend(g.net.tensors().into_iter().cloned());
        let used: Vec<usize> =
            inputs.iter().flat_map(|i| i.tokens.clone()).chain(cat_tokens.iter().flatten().copied()).collect();
        for _ in 0..200 {
            let t = rng.gen_range(0..analytic.len());
            let i = if t == 0 {
                used[rng.gen_range(0..used.len())] * cfg.embed_dim + rng.gen_range(0..cfg.embed_dim)
            } else {
                rng.gen_range(0..analytic[t].len())
            };
            let eps = 1e-4;
            let orig = p.tensors()[t][i];
            p.tensors_mut()[t][i] = orig + eps;
            let up = loss(&p, &cfg, &cat_tokens, &batch, lambda);
            p.tensors_mut()[t][i] = orig - eps;
            let down = loss(&p, &cfg, &cat_tokens, &batch, lambda);
            p.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let took = start.elapsed();
    outcome(
        worst < 1e-4 && took < Duration::from_secs(120),
        format!("max relative error {worst:.2e} over 2000 coordinates"),
    )
}

// ---------------------------------------------------------------- 2

fn simplex_check(samples: &[Sample]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut passes, mut worst, mut bad) = (0usize, 0.0f64, 0usize);
    let scales = [1.0f32, 10.0, 100.0, 1000.0];
    for m in 0..20u64 {
        let cfg = ModelConfig { vocab_buckets: 1024, ..ModelConfig::default() };
        let base = Model::new(cfg.clone(), m).expect("valid config");
        let k = scales[m as usize % scales.len()];
        let model = Model::from_params(cfg.clone(), base.params.map(|x| x * k));
        for _ in 0..500 {
            let inputs = if rng.gen_bool(0.5) {
                model.inputs(&samples[rng.gen_range(0..samples.len())]).expect("valid sample")
            } else {
                let mut i = random_inputs(&mut rng, &cfg);
                let amp = [1.0, 1e3, 1e6][rng.gen_range(0..3)];
                i.candidates.iter_mut().for_each(|c| c.loc.iter_mut().for_each(|v| *v *= amp));
                i
            };
            let (probs, w) = model.score_inputs(&inputs, 0.0).expect("non-empty");
            passes += 1;
            worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
            if w.iter().chain(&probs).any(|x| !x.is_finite()) {
                bad += 1;
            }
        }
    }
    outcome(
        passes == 10_000 && worst <= 1e-6 && bad == 0,
        format!("{passes} passes, max |sum w - 1| = {worst:.1e}, {bad} non-finite"),
    )
}

// ---------------------------------------------------------------- 3

/// Independent re-implementation of the rule cascade. Returns the chosen id.
fn brute_force_heuristic(sample: &Sample, lex: &KeywordLexicon, stop: &HashSet<String>) -> u32 {
    let toks: HashSet<&str> = sample.request.tokens.iter().map(String::as_str).collect();

    // rule 1: keyword kinds in priority order
    let mut allowed: BTreeSet<EntityCategory> = BTreeSet::new();
    for kind in 0..3 {
        for (cat, kw) in &lex.categories {
            let words = [&kw.nouns, &kw.verbs, &kw.apps][kind];
            if words.iter().any(|w| toks.contains(w.as_str())) {
                allowed.insert(*cat);
            }
        }
        if !allowed.is_empty() {
            break;
        }
    }
    let mut pool: Vec<&Entity> = sample.candidates.iter().filter(|c| allowed.contains(&c.category)).collect();
    if pool.is_empty() {
        pool = sample.candidates.iter().collect();
    }

    // rule 2: first positional word, reading order
    let words = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"];
    let t = &sample.request.tokens;
    let mut pos: Option<(usize, bool)> = None; // (index into order, from end)
    for i in 0..t.len() {
        let w = t[i].as_str();
        let found = if let Some(k) = words.iter().position(|x| *x == w) {
            Some((k, false))
        } else if w == "top" {
            Some((0, false))
        } else if w == "bottom" || w == "last" {
            Some((0, true))
        } else if w == "middle" {
            Some((usize::MAX, false))
        } else if let (Ok(k), Some(sfx)) = (w.parse::<usize>(), t.get(i + 1)) {
            let digits = w.chars().all(|c| c.is_ascii_digit());
            (digits && (1..=10).contains(&k) && ["st", "nd", "rd", "th"].contains(&sfx.as_str()))
                .then(|| (k - 1, false))
        } else {
            None
        };
        if found.is_some() {
            pos = found;
            break;
        }
    }
    if let Some((k, from_end)) = pos {
        let mut order = pool.clone();
        order.sort_by(|a, b| {
            (a.bbox.y, a.bbox.x, a.id).partial_cmp(&(b.bbox.y, b.bbox.x, b.id)).expect("finite boxes")
        });
        let n = order.len();
        let idx = if from_end { Some(n - 1) } else if k == usize::MAX { Some(n / 2) } else { (k < n).then_some(k) };
        if let Some(i) = idx {
            return order[i].id;
        }
    }

    // rule 3: best-overlapping text, non-candidate texts first
    if let Some(screen) = &sample.screen {
        let own: HashSet<u32> = pool.iter().map(|c| c.ocr_text_id).collect();
        for use_own in [false, true] {
            let mut scored: Vec<(usize, usize, &OcrText)> = Vec::new();
            for text in screen.ocr_texts.iter().filter(|x| own.contains(&x.id) == use_own) {
                let content: BTreeSet<String> = screenref::screen::split_tokens(&text.text)
                    .into_iter()
                    .filter(|w| !stop.contains(w))
                    .collect();
                let hits = content.iter().filter(|w| toks.contains(w.as_str())).count();
                if hits > 0 {
                    scored.push((hits, content.len(), text));
                }
            }
            // hits/total descending, then hits descending, then id ascending
            scored.sort_by(|a, b| {
                (b.0 * a.1).cmp(&(a.0 * b.1)).then(b.0.cmp(&a.0)).then(a.2.id.cmp(&b.2.id))
            });
            if let Some((_, _, text)) = scored.first() {
                let (tx, ty) = text.bbox.center();
                let mut best = pool.clone();
                best.sort_by(|a, b| {
                    let d = |e: &Entity| {
                        let (x, y) = e.bbox.center();
                        ((x - tx).powi(2) + (y - ty).powi(2)).sqrt()
                    };
                    d(a).total_cmp(&d(b)).then(a.id.cmp(&b.id))
                });
                return best[0].id;
            }
        }
    }

    // rule 4: uniform over the pool; argmax breaks ties by lowest id
    pool.iter().map(|c| c.id).min().expect("non-empty pool")
}

fn heuristic_equivalence(corpus: &Corpus) -> Outcome {
    let resolver = HeuristicResolver::default();
    let lex = KeywordLexicon::default();
    let stop = default_stopwords();
    let desc = corpus.all().filter(|s| s.subset == Subset::Descriptive).take(800);
    let cat = corpus.all().filter(|s| s.subset == Subset::CategoryLevel).take(200);
    let (mut n, mut agree) = (0usize, 0usize);
    let mut first_miss = None;
    for s in desc.chain(cat) {
        n += 1;
        let ids: Vec<u32> = s.candidates.iter().map(|c| c.id).collect();
        let scores = resolver.resolve(&s.request, s).expect("resolvable");
        let want = brute_force_heuristic(s, &lex, stop);
        if argmax_id(&ids, &scores) == want {
            agree += 1;
        } else if first_miss.is_none() {
            first_miss = Some(s.request.id.clone());
        }
    }
    let mut detail = format!("{agree}/{n} argmax agreement");
    if let Some(id) = first_miss {
        detail.push_str(&format!(", first disagreement on {id}"));
    }
    outcome(n == 1000 && agree == n, detail)
}

// ---------------------------------------------------------------- 4

fn table2(corpus: &Corpus, stats: &CorpusReport, model: &Model, train_time: Duration) -> (Outcome, MetricsReport) {
    let start = Instant::now();
    let tau = model.config.threshold;
    let resolvers: Vec<Box<dyn screenref::eval::Resolver>> = vec![
        Box::new(HeuristicResolver::default()),
        Box::new(model.clone()),
        Box::new(CategoryOracle),
        Box::new(NoTextOracle),
    ];
    let reports = resolvers.iter().map(|r| evaluate(r.as_ref(), &corpus.test, tau).expect("evaluates")).collect();
    let m = MetricsReport { threshold: tau, corpus_sha256: None, model_sha256: None, resolvers: reports };
    let took = train_time + start.elapsed();
    let g = |r: &str, s: Subset| m.get(r, s).expect("subset present");
    let (cl, de) = (Subset::CategoryLevel, Subset::Descriptive);
    let size_ok = stats.category_level.total_requests >= 4000 && stats.descriptive.screen_count >= 350;
    let a = g("srr", cl).top1_error < g("heuristic", cl).top1_error
        && g("srr", de).top1_error < g("heuristic", de).top1_error;
    let b = g("cat-oracle", cl).exact_match == 100.0
        && g("cat-oracle", cl).top1_error == 0.0
        && g("cat-oracle", de).exact_match == 0.0;
    let nt = g("no-text-oracle", de);
    let c = g("no-text-oracle", cl).exact_match == 100.0
        && nt.exact_match > 0.0
        && nt.exact_match < 100.0
        && nt.top1_error > g("srr", de).top1_error
        && nt.top1_error < g("cat-oracle", de).top1_error;
    let detail = format!(
        "size {size_ok}, (a) {a}, (b) {b}, (c) {c}; top-1 err cat-level srr {:.1} vs heuristic {:.1}, \
         descriptive srr {:.1} vs heuristic {:.1}, no-text {:.1}, cat-oracle {:.1}; {:.0}s",
        g("srr", cl).top1_error,
        g("heuristic", cl).top1_error,
        g("srr", de).top1_error,
        g("heuristic", de).top1_error,
        nt.top1_error,
        g("cat-oracle", de).top1_error,
        took.as_secs_f64()
    );
    (outcome(size_ok && a && b && c && took < Duration::from_secs(30 * 60), detail), m)
}

// ---------------------------------------------------------------- 5

fn ablation(corpus: &Corpus) -> Outcome {
    let mut good_seeds = 0;
    let mut details = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..3u64 {
        let start = Instant::now();
        let config = TrainConfig { seed, ..TrainConfig::default() };
        let results: Vec<_> = module_subsets()
            .iter()
            .map(|m| ablate(corpus, &ModelConfig::default(), &config, m).expect("trains").0)
            .collect();
        slowest = slowest.max(start.elapsed());
        let rep = report_ablation(&results).expect("seven subsets");
        let ok = rep.full_model_first && rep.violations.is_empty();
        good_seeds += usize::from(ok);
        let errs: Vec<String> =
            rep.rows.iter().map(|r| format!("{}={:.1}", r.modules.join("+"), r.top1_error())).collect();
        details.push(format!("seed {seed} {} [{}]", if ok { "ok" } else { "violated" }, errs.join(" ")));
        for v in &rep.violations {
            let _ = writeln!(std::io::stderr(), "  seed {seed}: {v}");
        }
        if !rep.full_model_first {
            let _ = writeln!(std::io::stderr(), "  seed {seed}: full model is not the best subset");
        }
    }
    details.push(format!("slowest seed {:.0}s", slowest.as_secs_f64()));
    outcome(good_seeds >= 2 && slowest < Duration::from_secs(3 * 3600), details.join("; "))
}

// ---------------------------------------------------------------- 6

fn multilabel(corpus: &Corpus, model: &Model) -> Outcome {
    let tau = 0.7;
    let slice: Vec<&Sample> = corpus.test.iter().filter(|s| s.gold_ids.len() > 1).collect();
    let mut em = 0;
    for s in &slice {
        let probs = model.score(s).expect("scores");
        let sel: BTreeSet<u32> =
            s.candidates.iter().zip(&probs).filter(|(_, p)| **p >= tau).map(|(c, _)| c.id).collect();
        em += usize::from(sel == s.gold_ids);
    }
    let rate = 100.0 * em as f64 / slice.len().max(1) as f64;
    outcome(!slice.is_empty() && rate >= 80.0, format!("EM {rate:.1}% on {} multilabel test samples", slice.len()))
}

// ---------------------------------------------------------------- 7

fn stats_bands(stats: &CorpusReport) -> Outcome {
    let (c, d) = (&stats.category_level, &stats.descriptive);
    let all_req = (c.tokens_per_request * c.total_requests as f64 + d.tokens_per_request * d.total_requests as f64)
        / (c.total_requests + d.total_requests) as f64;
    let in_band = |x: f64, lo: f64, hi: f64| (lo..=hi).contains(&x);
    let ok = in_band(all_req, 6.5, 9.0)
        && in_band(c.tokens_per_reference, 1.5, 2.6)
        && in_band(d.tokens_per_reference, 3.5, 5.0)
        && d.multilabel_count == 0;
    outcome(
        ok,
        format!(
            "tokens/request {all_req:.2} (cat-level {:.2}, descriptive {:.2}), tokens/reference {:.2} / {:.2}, \
             descriptive multilabel {}",
            c.tokens_per_request, d.tokens_per_request, c.tokens_per_reference, d.tokens_per_reference, d.multilabel_count
        ),
    )
}

// ---------------------------------------------------------------- 8

fn determinism(corpus: &Corpus, model: &Model) -> Outcome {
    let (again, _) = generate_corpus(&GeneratorConfig::default()).expect("generates");
    let corpus_same = ["train", "val", "test"].iter().all(|s| {
        to_ndjson(corpus.split(s).unwrap()).unwrap() == to_ndjson(again.split(s).unwrap()).unwrap()
    });

    let small_cfg = GeneratorConfig { n_category_samples: 600, n_descriptive_screens: 150, ..GeneratorConfig::default() };
    let (small, _) = generate_corpus(&small_cfg).expect("generates");
    let tc = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
    let (m1, h1) = train(&small, &ModelConfig::default(), &tc).expect("trains");
    let (m2, h2) = train(&small, &ModelConfig::default(), &tc).expect("trains");
    let training_same = h1 == h2 && m1.to_bytes() == m2.to_bytes();

    let bytes = model.to_bytes();
    let restored = Model::from_bytes(&bytes).expect("round-trips");
    let roundtrip_same = corpus.test.iter().all(|s| {
        let a = model.score(s).unwrap();
        let b = restored.score(s).unwrap();
        a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let default_size = Model::new(ModelConfig::default(), 0).unwrap().to_bytes().len();
    let size_ok = default_size < 5 * 1024 * 1024 && bytes.len() == default_size;
    outcome(
        corpus_same && training_same && roundtrip_same && size_ok,
        format!(
            "corpus {corpus_same}, training {training_same}, round-trip {roundtrip_same}, model file {:.2} MB",
            default_size as f64 / (1024.0 * 1024.0)
        ),
    )
}

// ---------------------------------------------------------------- 9

fn split_hygiene(corpus: &Corpus) -> Outcome {
    let mut seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for name in ["train", "val", "test"] {
        for s in corpus.split(name).unwrap().iter().filter(|s| s.subset == Subset::Descriptive) {
            let id = s.screen.as_ref().expect("descriptive samples have screens").id.as_str();
            seen.entry(id).or_default().insert(name);
        }
    }
    let leaked = seen.values().filter(|v| v.len() > 1).count();
    outcome(leaked == 0, format!("{} screens, {leaked} in more than one split", seen.len()))
}

// ---------------------------------------------------------------- 10

fn scaled_screen(s: &Screen, k: u32) -> Screen {
    let f = f64::from(k);
    let b = |x: &BBox| BBox::new(x.x * f, x.y * f, x.w * f, x.h * f);
    Screen {
        id: s.id.clone(),
        width: s.width * k,
        height: s.height * k,
        ocr_texts: s.ocr_texts.iter().map(|t| OcrText { bbox: b(&t.bbox), ..t.clone() }).collect(),
        entities: s.entities.iter().map(|e| Entity { bbox: b(&e.bbox), ..e.clone() }).collect(),
    }
}

fn feature_invariants(corpus: &Corpus) -> Outcome {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for (i, s) in corpus.train.iter().filter_map(|s| s.screen.as_ref()).take(300).enumerate() {
        let k = [2, 3, 5, 7][i % 4];
        let big = scaled_screen(s, k);
        for (a, b) in s.entities.iter().zip(&big.entities) {
            checked += 1;
            if location_features(a, Some(s)) != location_features(b, Some(&big)) {
                mismatches += 1;
            }
        }
    }
    let e = Entity {
        id: 0,
        ocr_text_id: 0,
        text: "+91 9998888".into(),
        bbox: BBox::new(40.0, 360.0, 400.0, 30.0),
        category: EntityCategory::PhoneNumber,
    };
    let screen = Screen {
        id: "fig".into(),
        width: 1000,
        height: 1000,
        ocr_texts: vec![OcrText { id: 0, text: e.text.clone(), bbox: e.bbox }],
        entities: vec![e.clone()],
    };
    let got = location_features(&e, Some(&screen)).self_box;
    let want = [0.04, 0.36, 0.44, 0.39, 0.012];
    let worked = got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-6);
    outcome(
        mismatches == 0 && checked > 0 && worked,
        format!("{checked} entities scaled, {mismatches} mismatches; worked example {got:?}"),
    )
}

// ----------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        report(id, name, &o, start.elapsed());
        results.push((id, name, o));
    };

    run(1, "gradient correctness", &mut gradient_check);
    run(10, "feature invariants", &mut || {
        let (c, _) = generate_corpus(&GeneratorConfig { n_descriptive_screens: 100, ..Default::default() }).unwrap();
        feature_invariants(&c)
    });

    let (corpus, stats) = generate_corpus(&GeneratorConfig::default()).expect("default corpus");
    run(7, "corpus statistics", &mut || stats_bands(&stats));
    run(9, "split hygiene", &mut || split_hygiene(&corpus));
    run(3, "heuristic oracle equivalence", &mut || heuristic_equivalence(&corpus));
    run(2, "simplex invariant", &mut || simplex_check(&corpus.test));

    let start = Instant::now();
    let (model, history) = train(&corpus, &ModelConfig::default(), &TrainConfig::default()).expect("trains");
    let train_time = start.elapsed();
    let _ = writeln!(
        std::io::stderr(),
        "trained default model: {} epochs, selected {}, {:.0}s",
        history.epochs.len() - 1,
        history.selected_epoch,
        train_time.as_secs_f64()
    );
    let mut table = None;
    run(4, "table 2 ordering", &mut || {
        let (o, m) = table2(&corpus, &stats, &model, train_time);
        table = Some(m);
        o
    });
    if let Some(m) = &table {
        let _ = write!(std::io::stderr(), "{}", m.table());
    }
    run(6, "threshold semantics", &mut || multilabel(&corpus, &model));
    run(8, "determinism and serialization", &mut || determinism(&corpus, &model));
    run(5, "ablation ordering", &mut || ablation(&corpus));

    results.sort_by_key(|r| r.0);
    let _ = writeln!(std::io::stderr(), "acceptance summary:");
    for (id, name, o) in &results {
        let _ = writeln!(std::io::stderr(), "  {id:>2} {:<30} {}", name, if o.pass { "PASS" } else { "FAIL" });
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
