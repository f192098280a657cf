use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use evolab::analytics::{
    ablate_intra_family_attacks, evaluate, head_to_head as run_head_to_head, kin_masking_drift, read_frames,
    legend, render_ppm, render_text, run_episode, write_frames, Controller, Frame, Interval, ProtocolConfig,
};
use evolab::cmaes::{load_evolution, save_evolution, sphere_selftest, Evolution};
use evolab::evdn::Trainer;
use evolab::neural::{load_checkpoint, save_checkpoint, QNetwork};
use evolab::par::ExecMode;
use serde_json::json;

use crate::config::RunConfig;
use crate::{CliError, ProtocolArgs, RenderFormat};

const RUN_FORMAT: &str = "evolab-run";
const ARTIFACT_VERSION: u32 = 1;

const METRICS_HEADER: &str = "tick,epsilon,experiences,loss,mean_population,births,deaths,episodes_finished";

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(evolab::Error::from)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Creates the run directory and records the exact configuration.
fn prepare_run(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<PathBuf, CliError> {
    let dir = cfg.run_dir();
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    write_json(
        &dir.join("run.json"),
        &json!({
            "format": RUN_FORMAT,
            "version": ARTIFACT_VERSION,
            "command": command,
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "seeds": extra,
        }),
    )?;
    Ok(dir)
}

/// Opens a CSV log for appending, dropping rows at or beyond `keep_below`
/// in the first column (rows written after the checkpoint being resumed).
fn open_log(path: &Path, header: &str, resume_from: Option<u64>) -> Result<BufWriter<File>, CliError> {
    match resume_from {
        Some(keep_below) if path.exists() => {
            let kept: Vec<String> = BufReader::new(File::open(path)?)
                .lines()
                .skip(1)
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|l| {
                    l.split(',').next().and_then(|t| t.parse::<u64>().ok()).is_some_and(|t| t < keep_below)
                })
                .collect();
            let mut f = File::create(path)?;
            writeln!(f, "{header}")?;
            for l in kept {
                writeln!(f, "{l}")?;
            }
            Ok(BufWriter::new(OpenOptions::new().append(true).open(path)?))
        }
        _ => {
            let mut f = BufWriter::new(File::create(path)?);
            writeln!(f, "{header}")?;
            Ok(f)
        }
    }
}

fn export_pool(dir: &Path, prefix: &str, nets: &[QNetwork]) -> Result<(), CliError> {
    for (k, net) in nets.iter().enumerate() {
        save_checkpoint(net, &dir.join(format!("{prefix}-{k}.evqn")))?;
    }
    Ok(())
}

pub fn train_evdn(path: &Path, resume: bool, ticks: Option<u64>) -> Result<(), CliError> {
    let cfg = RunConfig::load(path)?;
    let dir = prepare_run(&cfg, "train-evdn", json!({ "trainer": cfg.trainer.seed, "world": cfg.world.seed }))?;
    let ckpt = dir.join("checkpoints").join("trainer.json");
    let mut trainer = if resume && ckpt.exists() {
        let t = Trainer::load(&ckpt)?;
        if t.config() != &cfg.trainer || t.world_config() != &cfg.world {
            return Err(CliError::Config(format!("{} was written with a different configuration", ckpt.display())));
        }
        eprintln!("resuming at tick {}", t.ticks());
        t
    } else {
        Trainer::new(cfg.world.clone(), cfg.reward.clone(), cfg.trainer.clone())?
    };
    let mut log = open_log(&dir.join("metrics.csv"), METRICS_HEADER, resume.then_some(trainer.ticks()))?;
    let budget = ticks.unwrap_or(cfg.run.ticks);
    while trainer.ticks() < budget {
        let r = match trainer.train_epoch() {
            Ok(r) => r,
            Err(evolab::Error::Numeric(msg)) => {
                let dump = dir.join("numeric-failure.json");
                trainer.save(&dump)?;
                return Err(CliError::Numeric(format!("{msg}; trainer state dumped to {}", dump.display())));
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(
            log,
            "{},{},{},{},{},{},{},{}",
            r.tick, r.epsilon, r.experiences, r.loss, r.mean_population, r.births, r.deaths, r.episodes_finished
        )?;
        log.flush()?;
        if trainer.ticks() % cfg.run.checkpoint_every == 0 {
            trainer.save(&ckpt)?;
            export_pool(&dir.join("checkpoints"), "policy", trainer.pool())?;
        }
    }
    trainer.save(&ckpt)?;
    export_pool(&dir.join("checkpoints"), "policy", trainer.pool())?;
    eprintln!("trained {} ticks, {} experiences; run directory {}", trainer.ticks(), trainer.experiences(), dir.display());
    Ok(())
}

pub fn train_cmaes(path: &Path, resume: bool, generations: Option<u64>) -> Result<(), CliError> {
    let cfg = RunConfig::load(path)?;
    cfg.validate_cmaes()?;
    let dir = prepare_run(&cfg, "train-cmaes", json!({ "cmaes": cfg.cmaes.seed, "world": cfg.world.seed }))?;
    let ckpt = dir.join("checkpoints").join("cma.evcm");
    let mut evo = if resume && ckpt.exists() {
        let e = load_evolution(&ckpt)?;
        if e.config() != &cfg.cmaes || e.world_config() != &cfg.world {
            return Err(CliError::Config(format!("{} was written with a different configuration", ckpt.display())));
        }
        eprintln!("resuming at generation {}", e.generation());
        e
    } else {
        Evolution::new(cfg.world.clone(), cfg.cmaes.clone())?
    };
    let families = cfg.world.founder_count;
    let mut header = String::from("generation,stage,median_births_per_family,switched");
    for name in ["mean_fitness", "max_fitness", "best_so_far", "sigma"] {
        for f in 0..families {
            header.push_str(&format!(",{name}_{f}"));
        }
    }
    let mut log = open_log(&dir.join("generations.csv"), &header, resume.then_some(evo.generation()))?;
    let budget = generations.unwrap_or(cfg.run.generations);
    while evo.generation() < budget {
        let r = evo.step()?;
        let stage = serde_json::to_value(r.stage).map_err(evolab::Error::from)?;
        let mut row = format!(
            "{},{},{},{}",
            r.generation,
            stage.as_str().unwrap_or_default(),
            r.median_births_per_family,
            r.switched
        );
        for v in [&r.mean_fitness, &r.max_fitness, &r.best_so_far, &r.sigma] {
            for x in v {
                row.push_str(&format!(",{x}"));
            }
        }
        writeln!(log, "{row}")?;
        log.flush()?;
        if evo.generation() % cfg.run.cmaes_checkpoint_every == 0 {
            save_evolution(&evo, &ckpt)?;
            export_pool(&dir.join("checkpoints"), "family", &evo.networks()?)?;
        }
    }
    save_evolution(&evo, &ckpt)?;
    export_pool(&dir.join("checkpoints"), "family", &evo.networks()?)?;
    eprintln!("evolved {} generations; run directory {}", evo.generation(), dir.display());
    Ok(())
}

pub fn cmaes_selftest(dim: usize, target: f64, generations: u64, seed: u64) -> Result<(), CliError> {
    let (reached, best) = sphere_selftest(dim, target, generations, seed)?;
    match reached {
        Some(g) => {
            println!("sphere d={dim}: f = {best:e} < {target:e} at generation {g}");
            Ok(())
        }
        None => Err(CliError::Other(format!(
            "sphere d={dim}: best f = {best:e} after {generations} generations, target {target:e} not reached"
        ))),
    }
}

struct Loaded {
    cfg: RunConfig,
    pool: Vec<QNetwork>,
    protocol: ProtocolConfig,
    out: PathBuf,
}

fn load_pool(cfg: &RunConfig, paths: &[PathBuf]) -> Result<Vec<QNetwork>, CliError> {
    paths
        .iter()
        .map(|p| {
            let net = load_checkpoint(p).map_err(|e| match CliError::from(e) {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })?;
            let arch = net.architecture();
            if arch != cfg.trainer.architecture && arch != cfg.cmaes.architecture {
                return Err(CliError::Config(format!(
                    "{}: architecture {:?} matches neither [trainer] nor [cmaes] in the config",
                    p.display(),
                    arch
                )));
            }
            Ok(net)
        })
        .collect()
}

fn load_protocol(args: &ProtocolArgs, command: &str, default_episodes: usize) -> Result<Loaded, CliError> {
    let cfg = RunConfig::load(&args.config)?;
    if !args.random && args.checkpoints.is_empty() && command != "headtohead" {
        return Err(CliError::Config("give at least one --checkpoint or --random".into()));
    }
    let pool = load_pool(&cfg, &args.checkpoints)?;
    let protocol = ProtocolConfig {
        world: cfg.world.clone(),
        episodes: args.episodes.unwrap_or(default_episodes),
        length: args.length,
        seed: args.seed,
        observation: cfg.trainer.observation,
        exec: if args.sequential { ExecMode::Sequential } else { ExecMode::Parallel },
    };
    let out = args.out.clone().unwrap_or_else(|| cfg.run_dir().join(command));
    fs::create_dir_all(&out)?;
    Ok(Loaded { cfg, pool, protocol, out })
}

fn controllers<'a>(loaded: &'a Loaded, random: bool) -> Vec<Controller<'a>> {
    (0..loaded.protocol.world.founder_count)
        .map(|k| {
            if random {
                Controller::Random
            } else {
                Controller::Greedy(&loaded.pool[k % loaded.pool.len()])
            }
        })
        .collect()
}

fn provenance(loaded: &Loaded, command: &str, args: &ProtocolArgs) -> serde_json::Value {
    json!({
        "format": format!("evolab-{command}"),
        "version": ARTIFACT_VERSION,
        "config_hash": loaded.cfg.hash(),
        "seed": loaded.protocol.seed,
        "episodes": loaded.protocol.episodes,
        "length": loaded.protocol.length,
        "checkpoints": args.checkpoints,
        "random": args.random,
        "ci": "normal approximation, 95%, over episode means",
    })
}

fn interval(i: &Interval) -> serde_json::Value {
    json!({ "mean": i.mean, "low": i.low(), "high": i.high(), "n": i.n })
}

fn csv_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn eval(args: &ProtocolArgs, record: usize) -> Result<(), CliError> {
    let loaded = load_protocol(args, "eval", 20)?;
    let ctl = controllers(&loaded, args.random);
    let result = evaluate(&loaded.protocol, &ctl)?;
    result.write_csv(csv_file(&loaded.out.join("eval.csv"))?)?;
    let mut summary = provenance(&loaded, "eval", args);
    summary["metrics"] = result.metrics.iter().map(|(k, v)| (k.clone(), interval(v))).collect();
    write_json(&loaded.out.join("eval.json"), &summary)?;
    if record > 0 {
        let dir = loaded.out.join("episodes");
        fs::create_dir_all(&dir)?;
        for e in 0..record.min(loaded.protocol.episodes) {
            let setup = loaded.protocol.setup(e, &ctl, None, loaded.protocol.observation);
            let mut frames = Vec::new();
            let mut capture = |w: &evolab::world::World| frames.push(Frame::capture(w));
            run_episode(&setup, Some(&mut capture))?;
            write_frames(&frames, BufWriter::new(File::create(dir.join(format!("episode-{e}.frames.jsonl")))?))?;
        }
    }
    for (k, v) in &result.metrics {
        println!("{k:>20}: {:.4} [{:.4}, {:.4}]", v.mean, v.low(), v.high());
    }
    Ok(())
}

pub fn head_to_head(args: &ProtocolArgs, pairs: &[String]) -> Result<(), CliError> {
    if pairs.len() != 4 {
        return Err(CliError::Config(format!("head-to-head takes exactly 4 --pair values, got {}", pairs.len())));
    }
    let mut paths = Vec::new();
    let mut genomes = Vec::new();
    for p in pairs {
        let (ckpt, genome) = p
            .rsplit_once('=')
            .ok_or_else(|| CliError::Config(format!("--pair {p}: expected CHECKPOINT=GENOME")))?;
        let g: usize = genome
            .parse()
            .ok()
            .filter(|g| *g < 4)
            .ok_or_else(|| CliError::Config(format!("--pair {p}: genome must be 0..4")))?;
        if genomes.contains(&g) {
            return Err(CliError::Config(format!("genome {g} assigned twice")));
        }
        genomes.push(g);
        paths.push(ckpt.to_string());
    }
    let mut loaded = load_protocol(args, "headtohead", 90)?;
    loaded.protocol.world.founder_count = 4;
    let files: Vec<PathBuf> = paths.iter().filter(|p| p.as_str() != "random").map(PathBuf::from).collect();
    loaded.pool = load_pool(&loaded.cfg, &files)?;
    let mut next = 0;
    let mut slot = [None; 4];
    for (p, &g) in paths.iter().zip(&genomes) {
        if p != "random" {
            slot[g] = Some(next);
            next += 1;
        }
    }
    let ctl: [Controller; 4] = std::array::from_fn(|g| match slot[g] {
        Some(i) => Controller::Greedy(&loaded.pool[i]),
        None => Controller::Random,
    });
    let result = run_head_to_head(&loaded.protocol, ctl, [genomes[0], genomes[1]])?;
    result.write_csv(csv_file(&loaded.out.join("headtohead.csv"))?)?;
    let mut summary = provenance(&loaded, "headtohead", args);
    summary["pairs"] = json!(pairs);
    summary["side_a"] = json!(result.side_a);
    summary["side_b"] = json!(result.side_b);
    summary["final_gap"] = json!(result.final_gap);
    summary["extinct_a"] = json!(result.extinct_a);
    summary["extinct_b"] = json!(result.extinct_b);
    summary["final_family_size"] = result.series.families.iter().map(|s| interval(s.last().expect("series"))).collect();
    write_json(&loaded.out.join("headtohead.json"), &summary)?;
    println!(
        "side A {:?} vs side B {:?}: mean final gap {:.3}, p = {:.4}; extinct A {:.2}, B {:.2}",
        result.side_a, result.side_b, result.final_gap.mean_difference, result.final_gap.p, result.extinct_a, result.extinct_b
    );
    Ok(())
}

pub fn ablate(args: &ProtocolArgs, family: u32) -> Result<(), CliError> {
    let loaded = load_protocol(args, "ablate", 90)?;
    if family as usize >= loaded.protocol.world.founder_count {
        return Err(CliError::Config(format!("family {family} does not exist")));
    }
    let ctl = controllers(&loaded, args.random);
    let result = ablate_intra_family_attacks(&loaded.protocol, &ctl, family)?;
    result.write_csv(csv_file(&loaded.out.join("ablate.csv"))?)?;
    let f = family as usize;
    let mut summary = provenance(&loaded, "ablate", args);
    summary["family"] = json!(family);
    summary["intra_attacks_intact"] = json!(result.intra_attacks_intact);
    summary["intra_attacks_masked"] = json!(result.intra_attacks_masked);
    summary["final_gap"] = json!(result.final_gap);
    summary["final_size_intact"] = interval(result.intact_series.families[f].last().expect("series"));
    summary["final_size_masked"] = interval(result.masked_series.families[f].last().expect("series"));
    write_json(&loaded.out.join("ablate.json"), &summary)?;
    println!(
        "family {family}: intra attacks {} intact / {} masked; final size gap {:.3} (p = {:.4})",
        result.intra_attacks_intact, result.intra_attacks_masked, result.final_gap.mean_difference, result.final_gap.p
    );
    Ok(())
}

pub fn drift(args: &ProtocolArgs) -> Result<(), CliError> {
    let loaded = load_protocol(args, "drift", 20)?;
    let ctl = controllers(&loaded, args.random);
    let result = kin_masking_drift(&loaded.protocol, &ctl)?;
    result.write_csv(csv_file(&loaded.out.join("drift.csv"))?)?;
    let mut summary = provenance(&loaded, "drift", args);
    for arm in &result.arms {
        summary[&arm.name] = arm.entropy.iter().map(interval).collect();
    }
    write_json(&loaded.out.join("drift.json"), &summary)?;
    for arm in &result.arms {
        let last = arm.entropy.iter().rev().find(|i| i.n > 0);
        println!("{}: entropy at tick 0 {:.4}, last {:?}", arm.name, arm.entropy[0].mean, last.map(|i| i.mean));
    }
    Ok(())
}

pub fn render(run_dir: &Path, episode: usize, format: RenderFormat, cell: u32, out: Option<PathBuf>) -> Result<(), CliError> {
    let candidates = [
        run_dir.join("episodes").join(format!("episode-{episode}.frames.jsonl")),
        run_dir.join("eval").join("episodes").join(format!("episode-{episode}.frames.jsonl")),
    ];
    let log = candidates
        .iter()
        .find(|p| p.exists())
        .ok_or_else(|| CliError::Config(format!("no recorded log for episode {episode} under {}", run_dir.display())))?;
    let frames = read_frames(BufReader::new(File::open(log)?))?;
    let out = out.unwrap_or_else(|| run_dir.join("render").join(format!("episode-{episode}")));
    let families = frames
        .iter()
        .flat_map(|f| f.rows.iter().flat_map(|r| r.chars()))
        .filter_map(|c| c.to_digit(10))
        .max()
        .map_or(0, |d| d as usize + 1);
    let mut key = String::new();
    for (glyph, rgb, meaning) in legend() {
        if glyph.to_digit(10).is_some_and(|d| d as usize >= families.max(1)) {
            continue;
        }
        key.push_str(&format!("{glyph} #{:02x}{:02x}{:02x} {meaning}\n", rgb[0], rgb[1], rgb[2]));
    }
    match format {
        RenderFormat::Text => {
            let mut text = format!("legend\n{key}\n");
            for f in &frames {
                text.push_str(&render_text(f));
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("frames.txt"), &text)?;
            print!("{text}");
        }
        RenderFormat::Ppm => {
            fs::create_dir_all(&out)?;
            fs::write(out.join("legend.txt"), &key)?;
            for f in &frames {
                fs::write(out.join(format!("frame-{:05}.ppm", f.tick)), render_ppm(f, cell)?)?;
            }
            println!("{} frames written to {}", frames.len(), out.display());
        }
    }
    Ok(())
}
