use clap::{Args, Parser, Subcommand};
use mhdci::building_flows::{BoxFlowFamily, FlowParams};
use mhdci::cutoffs_gaps::{build_partition, Ladder};
use mhdci::geometry::{load_direction_sets, Mat3, SkewLemma, SymLemma};
use mhdci::gluing::{defect, glue_at, solve_locals};
use mhdci::io::{to_json, write_field};
use mhdci::iteration::{
    bootstrap, desk_data, diagnose, load_state, one_step, save_state, spectrum, Profile, StepConfig,
};
use mhdci::mhd_solver::{integrate, MhdState};
use mhdci::{Error, Field, Grid, Rank, Result};
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mhdci", version, about = "Convex-integration workbench for MHD on the 3-torus")]
struct Cli {
    /// Plain-text `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a bootstrap state from the desk initial data.
    Init(InitArgs),
    /// Decompose a 3x3 matrix (JSON) into geometric-lemma coefficients.
    Decompose {
        input: PathBuf,
    },
    /// Build a box-flow family and write every flow as TFLD.
    Flows {
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the local problems of a state and write the glued tuple at one time.
    Glue {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        time: f64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One q -> q+1 step with the ledger.
    Step {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        energy: Option<PathBuf>,
        #[arg(long)]
        helicity: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Norms over time, the ledger rows of a state, and optional spectra.
    Diagnose {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 11)]
        times: usize,
        #[arg(long)]
        spectra: bool,
    },
    /// Integrate MHD from the desk data and report the energy budget.
    MhdRun {
        #[command(flatten)]
        init: InitArgs,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    amp: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

struct Config(BTreeMap<String, String>);

impl Config {
    fn load(path: Option<&Path>) -> Result<Config> {
        let Some(p) = path else { return Ok(Config(BTreeMap::new())) };
        Ok(Config(parse_kv(&fs::read_to_string(p)?)?))
    }

    fn get<T: std::str::FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            Some(s) => s.parse().map_err(|_| Error::Format(format!("bad value for {key}: {s}"))),
            None => Ok(default),
        }
    }

    fn ladder(&self) -> Result<Ladder> {
        let d = Ladder::desk();
        Ok(Ladder {
            a: self.get("a", None, d.a)?,
            b: self.get("b", None, d.b)?,
            beta: self.get("beta", None, d.beta)?,
            alpha: self.get("alpha", None, d.alpha)?,
            gap_alpha: self.get("gap_alpha", None, d.gap_alpha)?,
        })
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// `kind = band | constant` and `value = <number>`.
fn read_profile(path: Option<&Path>, default: Profile) -> Result<Profile> {
    let Some(p) = path else { return Ok(default) };
    let kv = parse_kv(&fs::read_to_string(p)?)?;
    let value: f64 = kv
        .get("value")
        .ok_or_else(|| Error::Format(format!("{}: missing value", p.display())))?
        .parse()
        .map_err(|_| Error::Format(format!("{}: value is not a number", p.display())))?;
    match kv.get("kind").map(String::as_str).unwrap_or("band") {
        "band" => Ok(Profile::Band(value)),
        "constant" => Ok(Profile::Constant(value)),
        k => Err(Error::Format(format!("unknown profile kind {k}"))),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    Ok(fs::write(path, text)?)
}

fn init_state(cfg: &Config, a: &InitArgs) -> Result<(Field, Field)> {
    let g = Grid::new(cfg.get("n", a.n, 64)?)?;
    Ok(desk_data(g, cfg.get("amp", a.amp, 0.1)?))
}

fn decompose(input: &Path) -> Result<String> {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(input)?).map_err(|e| Error::Format(e.to_string()))?;
    let rows = v.get("matrix").unwrap_or(&v);
    let m: Mat3 = serde_json::from_value(rows.clone()).map_err(|e| Error::Format(e.to_string()))?;
    let dirs = load_direction_sets();
    let skew = (0..3).all(|i| (0..3).all(|j| (m[i][j] + m[j][i]).abs() < 1e-14));
    let sym = (0..3).all(|i| (0..3).all(|j| (m[i][j] - m[j][i]).abs() < 1e-14));
    let (lemma, coef, radius) = if skew {
        let l = SkewLemma::new(&dirs.b)?;
        ("skew", l.coefficients(&m)?, l.eps)
    } else if sym {
        let l = SymLemma::new(&dirs.v)?;
        ("symmetric", l.coefficients(&m)?, l.eps)
    } else {
        return Err(Error::Format("matrix is neither symmetric nor antisymmetric".into()));
    };
    to_json(&json!({ "lemma": lemma, "radius": radius, "coefficients": coef }))
}

fn flows(preset: &str, n: usize, out: &Path) -> Result<String> {
    if preset != "desk" {
        return Err(Error::Format(format!("unknown preset {preset}")));
    }
    let g = Grid::new(n)?;
    let dirs = load_direction_sets();
    let fam = BoxFlowFamily::build(g, &dirs, &FlowParams::desk(dirs.n_lambda))?;
    fs::create_dir_all(out)?;
    let mut list = vec![];
    for (i, f) in fam.flows.iter().enumerate() {
        let (phi, _) = fam.samples(f, 0.0);
        write_field(&out.join(format!("phi_{i:02}.tfld")), &Field::from_real(g, Rank::Scalar, &[phi])?, 0.0, "phi")?;
        write_field(&out.join(format!("psi_{i:02}.tfld")), &fam.psi(f), 0.0, "psi")?;
        list.push(json!({ "family": f.family, "triple": f.triple, "shift": f.shift }));
    }
    let man = json!({ "params": fam.params, "overlap_points": fam.overlap_count(0.0), "flows": list });
    write(&out.join("flows.json"), &to_json(&man)?)?;
    Ok(format!("{} flows, overlap {}", fam.flows.len(), fam.overlap_count(0.0)))
}

fn glue(state: &Path, t: f64, dt: f64, out: &Path) -> Result<String> {
    let s = load_state(state)?;
    let part = build_partition(1.0, s.ladder.tau(s.q))?;
    let ell = s.ladder.ell(s.q);
    let runs = solve_locals(
        &part,
        |t0| {
            let (v, b, _, _) = s.fields(t0)?;
            MhdState::new(v.mollify(ell)?, b.mollify(ell)?, t0)
        },
        dt,
        &[t],
    )?;
    let gl = glue_at(&part, t, &runs)?;
    fs::create_dir_all(out)?;
    for (name, f) in [("v", &gl.v), ("b", &gl.b), ("p", &gl.p), ("r", &gl.r), ("m", &gl.m)] {
        write_field(&out.join(format!("{name}.tfld")), f, t, name)?;
    }
    let (dv, db) = defect(&gl);
    write(&out.join("glue.json"), &to_json(&json!({ "t": t, "defect_v": dv, "defect_b": db }))?)?;
    Ok(format!("glued at t = {t}: defects {dv:e}, {db:e}"))
}

fn run(cli: Cli) -> Result<String> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Init(a) => {
            let (v, b) = init_state(&cfg, &a)?;
            save_state(&a.out, &bootstrap(&v, &b, cfg.ladder()?)?)?;
            Ok(format!("bootstrap state written to {}", a.out.display()))
        }
        Cmd::Decompose { input } => decompose(&input),
        Cmd::Flows { preset, n, out } => flows(&preset, cfg.get("n", n, 64)?, &out),
        Cmd::Glue { state, time, dt, out } => glue(&state, time, cfg.get("dt", dt, 1.0 / 64.0)?, &out),
        Cmd::Step { state, energy, helicity, samples, dt, out } => {
            let s = load_state(&state)?;
            let e = read_profile(energy.as_deref(), Profile::energy_default(&s.ladder, s.q))?;
            let h = read_profile(helicity.as_deref(), Profile::helicity_default(&s.ladder, s.q))?;
            let d = StepConfig::default();
            let sc = StepConfig { dt: cfg.get("dt", dt, d.dt)?, samples: cfg.get("samples", samples, d.samples)? };
            let res = one_step(&s, &e, &h, &sc)?;
            write(&out.join("ledger.json"), &res.ledger.to_json()?)?;
            write(&out.join("ledger.csv"), &res.ledger.to_csv())?;
            save_state(&out.join("state"), &res.next)?;
            let fails = res.ledger.failures();
            let names: Vec<&str> = fails.iter().map(|r| r.name.as_str()).collect();
            Ok(format!("level {} written; {} failing rows {:?}", res.next.q, fails.len(), names))
        }
        Cmd::Diagnose { state, out, times, spectra } => {
            let s = load_state(&state)?;
            let ts: Vec<f64> = (0..times).map(|i| i as f64 / (times.max(2) - 1) as f64).collect();
            let (csv, ledger) = diagnose(&s, &ts)?;
            write(&out.join("norms.csv"), &csv)?;
            write(&out.join("ledger.json"), &ledger.to_json()?)?;
            if spectra {
                let mut sp = String::from("t,k,v,b\n");
                for &t in s.times().as_deref().unwrap_or(&ts) {
                    let (v, b, _, _) = s.fields(t)?;
                    for (k, (ev, eb)) in spectrum(&v).iter().zip(spectrum(&b)).enumerate() {
                        sp.push_str(&format!("{t:e},{k},{ev:e},{eb:e}\n"));
                    }
                }
                write(&out.join("spectra.csv"), &sp)?;
            }
            Ok(format!("{} failing rows", ledger.failures().len()))
        }
        Cmd::MhdRun { init, t_end, dt } => {
            let (v, b) = init_state(&cfg, &init)?;
            let t_end = cfg.get("t_end", t_end, 1.0)?;
            let st = MhdState::new(v, b, 0.0)?;
            let tr = integrate(&st, t_end, cfg.get("dt", dt, 1.0 / 64.0)?, &[t_end])?;
            fs::create_dir_all(&init.out)?;
            write_field(&init.out.join("v.tfld"), &tr.end.v, t_end, "v")?;
            write_field(&init.out.join("b.tfld"), &tr.end.b, t_end, "b")?;
            let bal = &tr.balance;
            let report = json!({
                "steps": tr.steps,
                "energy_start": bal.energy_start,
                "energy_end": bal.energy_end,
                "dissipation": bal.dissipation,
                "energy_drift": bal.energy_drift(),
                "helicity_start": bal.helicity_start,
                "helicity_end": bal.helicity_end,
                "helicity_drift": bal.helicity_drift(),
            });
            write(&init.out.join("balance.json"), &to_json(&report)?)?;
            Ok(format!("{} steps, energy drift {:e}", tr.steps, bal.energy_drift()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_resolution() { 3 } else { 2 })
        }
    }
}
