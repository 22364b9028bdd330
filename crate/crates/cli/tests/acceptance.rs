//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any fails.
//!
//! Tolerances: 1e-9 on every published value; 5 s for the semantics oracle run and
//! 30 s for the rationality oracle run.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, ExitCode, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{grid_points, naive_confidence, naive_sigma, oracle_rational, random_framework, rng, stable_framework, Shape};
use faf_core::aggregation::{brier_score, group_forecast, mean_group_forecast, weights, AgentRecord};
use faf_core::fixtures::{tokyo_framework, tokyo_lifecycle, tokyo_script, tokyo_start, tokyo_votes};
use faf_core::lifecycle::check_stable;
use faf_core::model::{delegate, Argument, Direction, Edge, Forecast, Polarity, ProConArgument};
use faf_core::rationality::{check_forecast, evaluate, nearest_rational, rational_interval, ConfidenceScore, Violation};
use faf_core::replay::{replay_question, ReplayConfig};
use faf_core::semantics::{aggregate_strengths, base_function, combine, score_all, score_argument};
use faf_core::{Grid, Lifecycle, LifecycleEvent, SubmitOutcome};
use rand::Rng;
use serde_json::{json, Value};

const TOL: f64 = 1e-9;
const GRID: Grid = Grid::PERCENT;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

type Outcome = Result<String, String>;

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

fn semantics() -> Outcome {
    let examples = [
        ("f(0.5,0.5)", base_function(0.5, 0.5).unwrap(), 0.75),
        ("f(0.3,0)", base_function(0.3, 0.0).unwrap(), 0.3),
        ("f(1,0.4)", base_function(1.0, 0.4).unwrap(), 1.0),
        ("Σ()", aggregate_strengths(&[]), 0.0),
        ("Σ(0.3)", aggregate_strengths(&[0.3]), 0.3),
        ("Σ(0.5,0.5,0.5)", aggregate_strengths(&[0.5, 0.5, 0.5]), 0.875),
        ("c(0.5,0.8,0.8)", combine(0.5, 0.8, 0.8).unwrap(), 0.5),
        ("c(0.5,0,0.6)", combine(0.5, 0.0, 0.6).unwrap(), 0.8),
        ("c(0.5,0.6,0)", combine(0.5, 0.6, 0.0).unwrap(), 0.2),
    ];
    for (name, got, want) in examples {
        ensure!(near(got, want), "{name} = {got}, expected {want}");
    }
    let mut u = tokyo_framework();
    let v = u.votes.entry("alice".into()).or_default();
    v.insert("a1".into(), 1.0);
    v.insert("a2".into(), 0.0);
    let d = delegate(&u, "alice").unwrap();
    let sigma_d1 = score_argument(&d, "d1").unwrap().value();
    ensure!(near(sigma_d1, 0.0), "σ(d1) with a1→1, a2→0 is {sigma_d1}, expected 0");
    ensure!(near(score_argument(&d, "a1").unwrap().value(), 1.0), "leaf argument must score its vote");

    let started = Instant::now();
    let shape = Shape { max_amendments: 4, max_nodes: 8, agents: 2 };
    let mut scored = 0;
    for seed in 0..500u64 {
        let u = random_framework(&mut rng(seed), &shape);
        for agent in &u.agents {
            let votes = u.votes.get(agent).cloned().unwrap_or_default();
            for (id, s) in score_all(&delegate(&u, agent).unwrap()).unwrap() {
                let naive = naive_sigma(&u, &votes, &id);
                ensure!(s.value() == naive, "seed {seed}: σ({id}) = {} but naive recursion gives {naive}", s.value());
                scored += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "500 DAGs took {elapsed:?}");
    Ok(format!("{} worked examples; 500 DAGs, {scored} strengths identical; {elapsed:.2?}", examples.len() + 2))
}

fn rationality_oracle() -> Outcome {
    let started = Instant::now();
    let shape = Shape { max_amendments: 4, max_nodes: 8, agents: 2 };
    let points = grid_points(100);
    let mut checks = 0;
    for seed in 0..1000u64 {
        let u = random_framework(&mut rng(7_000_000 + seed), &shape);
        let agent = u.agents.iter().next().unwrap().clone();
        let d = delegate(&u, &agent).unwrap();
        let fp = u.proposal_forecast();
        let c = naive_confidence(&u, &agent);
        let rational: Vec<f64> = points.iter().copied().filter(|f| oracle_rational(fp, c, *f).iter().all(|ok| *ok)).collect();
        for &f in &points {
            let verdict = check_forecast(&d, Forecast::new(f).unwrap(), GRID).unwrap();
            let [inc, dec, scale] = oracle_rational(fp, c, f);
            let expected: Vec<Violation> = [
                (!inc).then_some(Violation::IrrationalIncrease),
                (!dec).then_some(Violation::IrrationalDecrease),
                (!scale).then_some(Violation::IrrationalScale),
            ]
            .into_iter()
            .flatten()
            .collect();
            ensure!(verdict.violations == expected, "seed {seed}, Fp {fp}, C {c}, f {f}: {:?} vs {expected:?}", verdict.violations);
            checks += 1;
            if let Ok(n) = nearest_rational(&d, Forecast::new(f).unwrap(), GRID) {
                let n = n.value();
                ensure!(check_forecast(&d, Forecast::new(n).unwrap(), GRID).unwrap().accepted, "seed {seed}: suggestion {n} rejected");
                let best = rational.iter().map(|r| (r - f).abs()).fold(f64::INFINITY, f64::min);
                ensure!((n - f).abs() <= best + 1e-12, "seed {seed}: {n} is not the nearest rational forecast to {f}");
            } else {
                ensure!(rational.is_empty(), "seed {seed}: no suggestion although {} grid points are rational", rational.len());
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{checks} verdicts and suggestions match enumeration; {elapsed:.2?}"))
}

fn worked_rationality_example() -> Outcome {
    let c = ConfidenceScore::new(-0.5);
    let accepted: Vec<f64> = GRID.points().filter(|f| evaluate(0.75, c, *f, GRID).unwrap().accepted).collect();
    let expected: Vec<f64> = (38..=74).map(|k| GRID.point(k)).collect();
    ensure!(accepted == expected, "rational set {accepted:?}");
    ensure!(evaluate(0.75, c, 0.5, GRID).unwrap().accepted, "0.5 must be accepted");
    let i = rational_interval(0.75, -0.5, GRID).unwrap().unwrap();
    ensure!((i.min, i.max) == (0.38, 0.74), "interval [{}, {}]", i.min, i.max);
    Ok("rational grid set {0.38, …, 0.74} (37 points); 0.5 accepted".into())
}

fn propositions() -> Outcome {
    let mut gen = rng(2024);
    let mut frameworks = Vec::new();
    while frameworks.len() < 500 {
        if let Some(u) = stable_framework(&mut gen, GRID) {
            ensure!(check_stable(&u, GRID), "generator produced an unstable framework");
            frameworks.push(u);
        }
    }
    let mut w = rng(99);
    for (i, u) in frameworks.iter().enumerate() {
        let fp = u.proposal_forecast();
        let f: BTreeMap<String, f64> = u.forecasts.iter().map(|(a, f)| (a.clone(), f.value())).collect();
        let up = u.graph.amendments_with(Direction::Increase).next().is_some();
        let down = u.graph.amendments_with(Direction::Decrease).next().is_some();
        let mut briers: BTreeMap<String, f64> =
            u.agents.iter().map(|a| (a.clone(), if w.gen_bool(0.2) { 1.0 } else { w.gen::<f64>() })).collect();
        if briers.values().all(|b| *b == 1.0) {
            *briers.values_mut().next().unwrap() = 0.5;
        }
        let values: Vec<f64> = f.values().copied().collect();
        for fg in [mean_group_forecast(&values).unwrap(), group_forecast(&f, &briers).unwrap()] {
            ensure!(up || down || fg == fp, "case {i}: no amendments but Fg {fg} ≠ Fp {fp}");
            ensure!(up || fg <= fp, "case {i}: Fg {fg} above Fp {fp} without increase amendments");
            ensure!(down || fg >= fp, "case {i}: Fg {fg} below Fp {fp} without decrease amendments");
        }
        let dictator = u.agents.iter().nth(w.gen_range(0..u.agents.len())).unwrap();
        let dict: BTreeMap<String, f64> =
            u.agents.iter().map(|a| (a.clone(), if a == dictator { w.gen::<f64>() * 0.999 } else { 1.0 })).collect();
        ensure!(group_forecast(&f, &dict).unwrap() == f[dictator], "case {i}: dictator's forecast not adopted");
        let weights = weights(&briers).unwrap();
        for (a, b) in &briers {
            ensure!((*b == 1.0) == (weights[a] == 0.0) && weights[a] >= 0.0, "case {i}: weight {} for brier {b}", weights[a]);
        }
    }
    Ok("500 collectively rational frameworks, mean and weighted aggregation, 0 counterexamples".into())
}

fn aggregation() -> Outcome {
    let mut r = AgentRecord::new("x");
    r.push(0.8, true);
    r.push(0.4, false);
    let b = brier_score(&r).unwrap();
    ensure!(near(b, 0.1), "brier {b}");
    let agents = ["alice", "bob", "charlie"].map(String::from);
    let f: BTreeMap<String, f64> = agents.iter().cloned().zip([0.5, 0.6, 0.9]).collect();
    let briers: BTreeMap<String, f64> = agents.iter().cloned().zip([1.0, 0.2, 0.6]).collect();
    let fg = group_forecast(&f, &briers).unwrap();
    ensure!(near(fg, 0.7), "weighted group forecast {fg}");
    let zero: BTreeMap<String, f64> = agents.iter().cloned().zip([1.0; 3]).collect();
    let z = group_forecast(&f, &zero).unwrap();
    ensure!(z == 0.0, "all-zero weights gave {z}");
    Ok(format!("brier {b}; weighted Fg {fg}; all-zero weights {z}"))
}

fn lifecycle_determinism() -> Outcome {
    let mut records = BTreeMap::new();
    let run = replay_question(&tokyo_script(), &ReplayConfig::default(), &mut records).map_err(|e| e.to_string())?;
    let agents = run.lifecycle.session().frameworks[0].agents.len();
    ensure!(agents == 3, "{agents} agents");
    let jsonl: String = run.events.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
    let parsed: Vec<LifecycleEvent> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let rebuilt = Lifecycle::replay(&parsed).map_err(|e| e.to_string())?;
    ensure!(rebuilt.state_hash() == run.lifecycle.state_hash(), "replayed hash differs from live hash");
    ensure!(rebuilt == run.lifecycle, "replayed state differs field by field");

    let (mut lc, _, fid) = tokyo_lifecycle();
    let t = tokyo_start() + chrono::Duration::hours(1);
    for (agent, votes) in tokyo_votes() {
        for (arg, v) in votes {
            lc.cast_vote(&fid, agent, arg, v, t).unwrap();
        }
    }
    let before = lc.session().clone();
    let blocked = lc.submit_forecast(&fid, "alice", 0.10, t).map_err(|e| e.to_string())?.0;
    ensure!(matches!(blocked, SubmitOutcome::Blocked { .. }), "0.10 for alice should be blocked");
    ensure!(lc.session() == &before, "blocked submission changed the state");
    for (agent, f) in [("alice", 0.19), ("bob", 0.76), ("charlie", 0.95)] {
        lc.submit_forecast(&fid, agent, f, t).map_err(|e| e.to_string())?;
    }
    lc.resolve_framework(&fid, &BTreeMap::new(), t).map_err(|e| e.to_string())?;
    let hash = lc.state_hash();
    let con = Argument::ProCon(ProConArgument { id: "x".into(), polarity: Polarity::Con, text: String::new() });
    let attempts = [
        lc.cast_vote(&fid, "alice", "a1", 0.5, t).err(),
        lc.submit_forecast(&fid, "bob", 0.77, t).err(),
        lc.add_argument(&fid, con, vec![Edge::new("x", "d1")], t).err(),
        lc.resolve_framework(&fid, &BTreeMap::new(), t).err(),
    ];
    for e in &attempts {
        ensure!(e.as_ref().map(|e| e.code()) == Some("framework_resolved"), "resolved framework accepted a mutation: {e:?}");
    }
    ensure!(lc.state_hash() == hash, "rejected mutations changed the state");
    Ok(format!("{} events replay to hash {}…; 4 mutations rejected after resolution", run.events.len(), &hash[..12]))
}

fn golden_report() -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let script = fixtures.join("tokyo.json");
    let run = || Command::new(env!("CARGO_BIN_EXE_faf")).args(["replay", script.to_str().unwrap(), "--format", "json"]).output().unwrap();
    let (a, b) = (run(), run());
    ensure!(a.status.success(), "faf replay failed: {}", String::from_utf8_lossy(&a.stderr));
    ensure!(a.stdout == b.stdout, "two runs differ");
    let golden = std::fs::read(fixtures.join("tokyo.report.json")).map_err(|e| e.to_string())?;
    ensure!(a.stdout == golden, "output differs from the committed golden report");
    let report: Value = serde_json::from_slice(&golden).unwrap();
    let row = &report["rows"][0];
    let counts = (&row["forecasts"], &row["irrational_increase"], &row["irrational_decrease"], &row["irrational_scale"]);
    ensure!(counts == (&json!(4), &json!(1), &json!(1), &json!(2)), "counts {counts:?}");
    let follow_ups: Vec<f64> = report["blocked"].as_array().unwrap().iter().map(|b| b["follow_up"].as_f64().unwrap()).collect();
    ensure!(follow_ups == [0.19, 0.76, 0.74], "follow-ups {follow_ups:?}");
    Ok(format!("{} bytes, identical across runs; 4 forecasts, 1/1/2 increase/decrease/scale", golden.len()))
}

struct Server(Child, String);

impl Server {
    fn start(store: &Path) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_faf"))
            .args(["serve", "--bind", "127.0.0.1:0", "--store", store.to_str().unwrap()])
            .env("RUST_LOG", "off")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().trim_start_matches("listening on ").to_string();
        Server(child, base)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn service_contract() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let http = reqwest::blocking::Client::builder().timeout(Duration::from_secs(10)).build().unwrap();
    let base = server.1.clone();
    let post = |path: &str, body: Value, agent: &str| {
        let resp = http.post(format!("{base}{path}")).bearer_auth(agent).json(&body).send().unwrap();
        (resp.status().as_u16(), resp.json::<Value>().unwrap_or(Value::Null))
    };
    let ok = |(s, b): (u16, Value)| if (200..300).contains(&s) { Ok(()) } else { Err(format!("{s}: {b}")) };
    ok(post("/sessions", json!({"id": "t", "question": {"id": "t", "text": "?"}, "base_forecast": 0.5}), "setup"))?;
    ok(post("/sessions/t/frameworks", json!({"proposal": {"id": "P", "forecast": 0.75}, "agents": ["alice", "bob"]}), "setup"))?;
    ok(post("/frameworks/t.1/arguments", json!({"argument": {"type": "amendment", "id": "d1", "direction": "decrease"}}), "setup"))?;
    ok(post(
        "/frameworks/t.1/arguments",
        json!({"argument": {"type": "pro_con", "id": "s1", "polarity": "pro"}, "edges": [{"source": "s1", "target": "d1"}]}),
        "setup",
    ))?;
    ok(post("/frameworks/t.1/votes", json!({"argument": "s1", "value": 0.0}), "alice"))?;
    // σ(d1) = 0.5 so C = −0.5 against Fp = 0.75.
    let (status, body) = post("/frameworks/t.1/forecasts", json!({"forecast": 0.8}), "alice");
    ensure!(status == 409, "irrational forecast returned {status}");
    ensure!(body["violations"] == json!(["irrational_increase"]), "violations {}", body["violations"]);
    ensure!(body["suggestion"] == json!(0.74), "suggestion {}", body["suggestion"]);

    let stop = Arc::new(AtomicBool::new(false));
    let writer = {
        let (stop, url) = (stop.clone(), format!("{base}/frameworks/t.1/votes"));
        std::thread::spawn(move || {
            let http = reqwest::blocking::Client::builder().timeout(Duration::from_secs(5)).build().unwrap();
            let mut acked = Vec::new();
            for i in 0u32.. {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let value = (i % 100) as f64 / 100.0;
                match http.post(&url).bearer_auth("bob").json(&json!({"argument": "s1", "value": value})).send() {
                    Ok(r) if r.status().is_success() => acked.push(value),
                    _ => break,
                }
            }
            acked
        })
    };
    std::thread::sleep(Duration::from_millis(300));
    drop(server);
    stop.store(true, Ordering::Relaxed);
    let acked = writer.join().unwrap();
    let server = Server::start(dir.path());
    let feed: Value = http.get(format!("{}/frameworks/t.1/events?since=0", server.1)).send().unwrap().json().unwrap();
    let logged: Vec<f64> = feed["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["kind"] == "vote_cast" && e["payload"]["agent"] == "bob")
        .map(|e| e["payload"]["value"].as_f64().unwrap())
        .collect();
    ensure!(!acked.is_empty(), "no writes acknowledged before the kill");
    ensure!(logged.len() >= acked.len() && logged[..acked.len()] == acked[..], "acknowledged events lost: {} acked, {} logged", acked.len(), logged.len());
    Ok(format!("409 with violations and suggestion 0.74; SIGKILL after {} acknowledged writes, all {} recovered", acked.len(), acked.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("DF-QuAD unit suite and naive-recursion oracle", semantics),
        ("Rationality oracle on 1,000 random delegate frameworks", rationality_oracle),
        ("Worked rationality example (Fp 0.75, C -0.5)", worked_rationality_example),
        ("Balance, dictatorship and oligarchy properties", propositions),
        ("Aggregation worked examples", aggregation),
        ("Lifecycle determinism on the scripted Tokyo debate", lifecycle_determinism),
        ("Replay golden report", golden_report),
        ("Service contract: 409 verdicts and crash recovery", service_contract),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name} — {detail} [{:.2?}]", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} — {why} [{:.2?}]", started.elapsed());
            }
        }
    }
    let _ = std::panic::take_hook();
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
