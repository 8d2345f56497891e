//! Benchmark matrix: every row is a `control` run in its own child process,
//! timed with a monotonic clock while a sampler polls the child's resident
//! set size.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clap::Args;
use serde::Deserialize;

use crate::commands::Summary;
use crate::config::{ConfigFile, RunConfig};
use crate::{runtime, CliError, RunArgs};

pub const BENCH_HEADER: [&str; 8] =
    ["problem", "method", "time_s", "peak_mem_bytes", "steps", "refinements", "final_cost", "status"];

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Bench file: shared keys at the top level plus one `[[run]]` table per row.
    #[arg(long)]
    pub bench: Option<PathBuf>,
    /// Rows as `problem:method`, comma separated (used when no bench file is given).
    #[arg(long, value_delimiter = ',')]
    pub runs: Vec<String>,
    /// Number of rows run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Resident-set sampling rate in Hz.
    #[arg(long, default_value_t = 20.0)]
    pub sample_hz: f64,
    /// Shared settings; `--output` is the bench directory.
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFile {
    output: Option<PathBuf>,
    #[serde(default)]
    shared: toml::Table,
    #[serde(default)]
    run: Vec<toml::Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub problem: String,
    pub method: String,
    pub time_s: f64,
    pub peak_mem_bytes: u64,
    pub steps: usize,
    pub refinements: Option<usize>,
    pub final_cost: Option<f64>,
    pub status: String,
}

impl BenchRecord {
    fn fields(&self) -> [String; 8] {
        [
            self.problem.clone(),
            self.method.clone(),
            format!("{:?}", self.time_s),
            self.peak_mem_bytes.to_string(),
            self.steps.to_string(),
            self.refinements.map(|k| k.to_string()).unwrap_or_default(),
            self.final_cost.map(|c| format!("{c:?}")).unwrap_or_default(),
            self.status.clone(),
        ]
    }
}

pub fn write_records(path: &Path, rows: &[BenchRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    w.write_record(BENCH_HEADER).map_err(runtime)?;
    for r in rows {
        w.write_record(r.fields()).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

/// Recursively overlays `over` onto `base`.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn to_table(f: &ConfigFile) -> toml::Table {
    toml::from_str(&f.to_toml()).expect("config serialises to a table")
}

fn from_table(t: toml::Table) -> Result<ConfigFile, CliError> {
    ConfigFile::parse(&toml::to_string(&t).map_err(runtime)?).map_err(CliError::Usage)
}

/// Row configurations with shared settings applied.
fn plan(args: &BenchArgs) -> Result<(PathBuf, Vec<ConfigFile>), CliError> {
    let flags = args.run.merged()?;
    let mut rows = Vec::new();
    let mut out = flags.output.clone();
    if let Some(path) = &args.bench {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let file: BenchFile = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        out = out.or(file.output);
        for r in &file.run {
            let mut t = file.shared.clone();
            merge(&mut t, r);
            let mut flag_table = to_table(&flags);
            flag_table.remove("output");
            merge(&mut t, &flag_table);
            rows.push(from_table(t)?);
        }
    }
    for spec in &args.runs {
        let (problem, method) =
            spec.split_once(':').ok_or_else(|| CliError::Usage(format!("run `{spec}` is not of the form problem:method")))?;
        let mut f = flags.clone();
        f.problem = Some(problem.parse().map_err(CliError::Usage)?);
        f.method = Some(method.to_string());
        rows.push(f);
    }
    if rows.is_empty() {
        return Err(CliError::Usage("bench needs at least one run (--bench FILE or --runs problem:method,...)".into()));
    }
    if args.jobs == 0 || !(args.sample_hz >= 10.0 && args.sample_hz.is_finite()) {
        return Err(CliError::Usage("bench needs --jobs ≥ 1 and --sample-hz ≥ 10".into()));
    }
    Ok((out.unwrap_or_else(|| PathBuf::from("out/bench")), rows))
}

/// Resident set size of `pid` in bytes, if the process is still visible.
pub fn rss_bytes(pid: u32) -> Option<u64> {
    let s = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    let line = s.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

struct ChildOutcome {
    exit_code: Option<i32>,
    elapsed: Duration,
    peak_bytes: u64,
}

/// Spawns `cmd`, sampling its RSS every `period` until it exits.
fn monitor(mut cmd: Command, period: Duration) -> Result<ChildOutcome, CliError> {
    let start = Instant::now();
    let child = cmd.spawn().map_err(|e| CliError::Runtime(format!("cannot spawn bench row: {e}")))?;
    let pid = child.id() as libc::pid_t;
    let mut peak = 0u64;
    loop {
        if let Some(b) = rss_bytes(pid as u32) {
            peak = peak.max(b);
        }
        let mut status = 0;
        // SAFETY: rusage is plain data and both pointers are valid for the call.
        let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
        let r = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut usage) };
        if r == pid {
            let elapsed = start.elapsed();
            // ru_maxrss is reported in kilobytes on Linux.
            peak = peak.max(usage.ru_maxrss.max(0) as u64 * 1024);
            let exit_code = libc::WIFEXITED(status).then(|| libc::WEXITSTATUS(status));
            return Ok(ChildOutcome { exit_code, elapsed, peak_bytes: peak });
        }
        if r < 0 {
            return Err(CliError::Runtime(format!("wait4 failed: {}", std::io::Error::last_os_error())));
        }
        std::thread::sleep(period);
    }
}

fn run_row(exe: &Path, dir: &Path, file: &ConfigFile, period: Duration) -> Result<BenchRecord, CliError> {
    let cfg = RunConfig::resolve(file)?;
    std::fs::create_dir_all(dir).map_err(runtime)?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, file.to_toml()).map_err(runtime)?;
    let mut cmd = Command::new(exe);
    cmd.arg("control").arg("--config").arg(&cfg_path).arg("--output").arg(dir);
    cmd.stdin(Stdio::null())
        .stdout(File::create(dir.join("stdout.log")).map_err(runtime)?)
        .stderr(File::create(dir.join("stderr.log")).map_err(runtime)?);
    let out = monitor(cmd, period)?;
    let brief = Summary::load_brief(dir);
    let status = match (out.exit_code, &brief) {
        (Some(0), Ok((_, _, s))) => s.clone(),
        (code, b) => {
            let detail = match b {
                Ok((_, _, s)) if s != "ok" => s.clone(),
                _ => std::fs::read_to_string(dir.join("stderr.log"))
                    .ok()
                    .and_then(|s| s.lines().last().map(str::to_string))
                    .unwrap_or_default(),
            };
            match code {
                Some(c) => format!("error: exit {c}: {detail}"),
                None => format!("error: killed: {detail}"),
            }
        }
    };
    Ok(BenchRecord {
        problem: cfg.problem.to_string(),
        method: cfg.method.to_string(),
        time_s: out.elapsed.as_secs_f64(),
        peak_mem_bytes: out.peak_bytes,
        steps: brief.as_ref().map(|b| b.0).unwrap_or(cfg.steps()),
        refinements: cfg.refinements(),
        final_cost: brief.as_ref().ok().map(|b| b.1).filter(|c| !c.is_nan()),
        status,
    })
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    let (out, rows) = plan(args)?;
    for r in &rows {
        RunConfig::resolve(r)?;
    }
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let exe = std::env::current_exe().map_err(runtime)?;
    let period = Duration::from_secs_f64(1.0 / args.sample_hz);
    let results: Mutex<Vec<Option<BenchRecord>>> = Mutex::new(vec![None; rows.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..args.jobs.min(rows.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= rows.len() {
                    break;
                }
                let cfg = RunConfig::resolve(&rows[i]).expect("validated above");
                let dir = out.join(format!("row-{i:02}-{}-{}", cfg.problem, cfg.method));
                let rec = run_row(&exe, &dir, &rows[i], period).unwrap_or_else(|e| BenchRecord {
                    problem: cfg.problem.to_string(),
                    method: cfg.method.to_string(),
                    time_s: 0.0,
                    peak_mem_bytes: 0,
                    steps: cfg.steps(),
                    refinements: cfg.refinements(),
                    final_cost: None,
                    status: format!("error: {e}"),
                });
                eprintln!("row {i}: {} {} {:.1}s {}", rec.problem, rec.method, rec.time_s, rec.status);
                results.lock().unwrap()[i] = Some(rec);
            });
        }
    });
    let records: Vec<BenchRecord> = results.into_inner().unwrap().into_iter().map(|r| r.expect("every row ran")).collect();
    let path = out.join("bench.csv");
    write_records(&path, &records)?;
    println!("{}", BENCH_HEADER.join(","));
    for r in &records {
        println!("{}", r.fields().join(","));
    }
    println!("wrote {}", path.display());
    Ok(())
}
