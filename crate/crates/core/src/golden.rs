//! Regression cases that drive the command-line tool and check its outputs.
//!
//! In command arguments and file paths, `{bin}` expands to the tool binary
//! and `{work}` to the case's scratch directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::sha256_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCheck {
    /// JSON file relative to the work directory.
    pub file: String,
    /// Top-level numeric field.
    pub key: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    pub criterion: u32,
    pub description: String,
    /// Commands run in order; all but the last must succeed.
    pub commands: Vec<Vec<String>>,
    /// Exit code expected from the last command.
    #[serde(default)]
    pub exit_code: i32,
    /// File pairs that must be byte-identical.
    #[serde(default)]
    pub identical: Vec<[String; 2]>,
    /// Expected sha256 per file.
    #[serde(default)]
    pub checksums: Vec<[String; 2]>,
    #[serde(default)]
    pub metrics: Vec<MetricCheck>,
    /// Documented wall-clock bound; exceeding it fails the case.
    pub runtime_bound_s: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub seconds: f64,
    pub details: Vec<String>,
}

pub fn load_cases(path: &Path) -> Result<Vec<GoldenCase>> {
    crate::io::read_json(path)
}

fn expand(s: &str, bin: &Path, work: &Path) -> String {
    s.replace("{bin}", &bin.to_string_lossy())
        .replace("{work}", &work.to_string_lossy())
}

fn read_metric(path: &Path, key: &str) -> Result<f64> {
    let v: serde_json::Value = crate::io::read_json(path)?;
    v.get(key)
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Error::file(path, format!("no numeric field '{key}'")))
}

/// Runs one case from `cwd` with scratch directory `work`.
pub fn run_case(case: &GoldenCase, bin: &Path, cwd: &Path, work: &Path) -> Result<CaseResult> {
    fs::create_dir_all(work).map_err(|e| Error::file(work, e))?;
    let start = Instant::now();
    let mut details = Vec::new();
    let mut passed = true;
    for (n, cmd) in case.commands.iter().enumerate() {
        let args: Vec<String> = cmd.iter().map(|a| expand(a, bin, work)).collect();
        let (prog, rest) = args
            .split_first()
            .ok_or_else(|| Error::Config(format!("case '{}': empty command", case.name)))?;
        let out = Command::new(prog)
            .args(rest)
            .current_dir(cwd)
            .output()
            .map_err(|e| Error::Config(format!("case '{}': cannot run {prog}: {e}", case.name)))?;
        let code = out.status.code().unwrap_or(-1);
        let last = n + 1 == case.commands.len();
        let want = if last { case.exit_code } else { 0 };
        if code != want {
            passed = false;
            let stderr = String::from_utf8_lossy(&out.stderr);
            details.push(format!(
                "command {} exited {code}, expected {want}: {}",
                n + 1,
                stderr.lines().last().unwrap_or("")
            ));
            break;
        }
        if last {
            details.extend(
                String::from_utf8_lossy(&out.stdout)
                    .lines()
                    .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
                    .map(str::to_string),
            );
        }
    }
    if passed {
        for [a, b] in &case.identical {
            let (pa, pb) = (PathBuf::from(expand(a, bin, work)), PathBuf::from(expand(b, bin, work)));
            match (sha256_file(&pa), sha256_file(&pb)) {
                (Ok(x), Ok(y)) if x == y => details.push(format!("identical: {a} == {b}")),
                (Ok(_), Ok(_)) => {
                    passed = false;
                    details.push(format!("differ: {a} vs {b}"));
                }
                (Err(e), _) | (_, Err(e)) => {
                    passed = false;
                    details.push(e.to_string());
                }
            }
        }
        for [file, want] in &case.checksums {
            let p = PathBuf::from(expand(file, bin, work));
            match sha256_file(&p) {
                Ok((sha, _)) if &sha == want => details.push(format!("checksum ok: {file}")),
                Ok((sha, _)) => {
                    passed = false;
                    details.push(format!("checksum mismatch: {file} is {sha}, expected {want}"));
                }
                Err(e) => {
                    passed = false;
                    details.push(e.to_string());
                }
            }
        }
        for m in &case.metrics {
            let p = PathBuf::from(expand(&m.file, bin, work));
            match read_metric(&p, &m.key) {
                Ok(v) => {
                    let ok = m.min.is_none_or(|lo| v >= lo) && m.max.is_none_or(|hi| v <= hi);
                    passed &= ok;
                    details.push(format!(
                        "{}: {} = {v} (min {:?}, max {:?})",
                        if ok { "ok" } else { "out of range" },
                        m.key,
                        m.min,
                        m.max
                    ));
                }
                Err(e) => {
                    passed = false;
                    details.push(e.to_string());
                }
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    if seconds > case.runtime_bound_s as f64 {
        passed = false;
        details.push(format!("took {seconds:.1}s, bound {}s", case.runtime_bound_s));
    }
    Ok(CaseResult {
        name: case.name.clone(),
        passed,
        seconds,
        details,
    })
}
