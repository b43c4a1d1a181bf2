//! Commit-level and workflow-level feature extraction from a local git
//! repository plus an optional CI-run log. History is read oldest-first
//! along the branch's first-parent chain; every feature of commit `i` is a
//! function of commits `0..=i` only.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::process::Command;

use chrono::{Datelike, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, FeatureVector, Label};
use crate::error::{Error, Result};

pub const CLF_FEATURE_NAMES: [&str; 26] = [
    "ns", "entropy", "la", "ld", "day_week", "cm", "tfc", "classif", "is_fix", "is_doc",
    "is_build", "is_meta", "is_merge", "is_media", "is_src", "frm", "com", "prs", "pcr", "sc",
    "nuc", "age", "ndev", "lt", "exp", "sexp",
];

pub const WLF_FEATURE_NAMES: [&str; 3] = ["pbs", "fail_rate", "avg_exp"];

/// One changed file within a commit. `changed_lines` keeps the raw diff
/// lines with their +/- sign so message-free features (FRM, COM) can be
/// recomputed without re-reading the repository.
#[derive(Clone, Debug, PartialEq)]
pub struct FileChange {
    pub path: String,
    pub lines_added: usize,
    pub lines_deleted: usize,
    pub size_before: usize,
    pub changed_lines: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommitRecord {
    pub hash: String,
    pub author: String,
    pub timestamp: i64,
    pub parents: Vec<String>,
    pub message: String,
    pub file_changes: Vec<FileChange>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildResult {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkflowRecord {
    pub commit_hash: String,
    pub build_result: BuildResult,
    pub committer: String,
    pub timestamp: i64,
}

/// File-category extension/filename sets. The defaults are editable via a
/// JSON config file with the same field names.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtensionConfig {
    pub doc_extensions: Vec<String>,
    pub doc_filenames: Vec<String>,
    pub build_extensions: Vec<String>,
    pub build_filenames: Vec<String>,
    pub meta_extensions: Vec<String>,
    pub meta_filenames: Vec<String>,
    pub media_extensions: Vec<String>,
    pub src_extensions: Vec<String>,
    pub comment_prefixes: Vec<String>,
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        ExtensionConfig {
            doc_extensions: strs(&["md", "txt", "rst", "adoc", "docx", "doc"]),
            doc_filenames: strs(&["README", "CHANGELOG", "AUTHORS", "CONTRIBUTING"]),
            build_extensions: strs(&["gradle", "cmake", "yml", "yaml"]),
            build_filenames: strs(&[
                "pom.xml", "Makefile", "makefile", "Rakefile", "Gemfile", "build.xml",
            ]),
            meta_extensions: strs(&["gitignore", "gitattributes", "cfg", "ini", "properties"]),
            meta_filenames: strs(&[".gitignore", ".gitattributes", "LICENSE", "CODEOWNERS", "NOTICE"]),
            media_extensions: strs(&[
                "png", "jpg", "jpeg", "gif", "svg", "ico", "mp3", "mp4", "wav", "webm",
            ]),
            src_extensions: strs(&[
                "java", "rb", "rs", "py", "js", "ts", "c", "cc", "cpp", "h", "hpp", "go", "scala",
                "kt", "cs", "php",
            ]),
            comment_prefixes: strs(&["//", "/*", "*", "*/", "#", "<!--", "--"]),
        }
    }
}

impl ExtensionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn file_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

fn extension(path: &str) -> String {
    let name = file_name(path);
    match name.rfind('.') {
        Some(i) if i + 1 < name.len() => name[i + 1..].to_ascii_lowercase(),
        _ => String::new(),
    }
}

fn top_dir(path: &str) -> &str {
    match path.find('/') {
        Some(i) => &path[..i],
        None => "",
    }
}

fn in_category(path: &str, extensions: &[String], filenames: &[String]) -> bool {
    let name = file_name(path);
    filenames.iter().any(|f| f == name) || extensions.iter().any(|e| *e == extension(path))
}

/// Skip iff the message carries a `[ci skip]` or `[skip ci]` directive,
/// case-insensitively.
pub fn label_skip(message: &str) -> Label {
    let m = message.to_ascii_lowercase();
    if m.contains("[ci skip]") || m.contains("[skip ci]") {
        Label::Skip
    } else {
        Label::Build
    }
}

fn tokenize(message: &str) -> Vec<String> {
    message
        .to_ascii_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| t.len() >= 2)
        .map(str::to_string)
        .collect()
}

/// Inverse-document-frequency weights over commit messages; the CM feature
/// is the mean tf-idf weight of a message's distinct terms.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TermWeights {
    idf: BTreeMap<String, f64>,
    n_docs: usize,
}

impl TermWeights {
    pub fn fit<S: AsRef<str>>(messages: &[S]) -> TermWeights {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for m in messages {
            let distinct: HashSet<String> = tokenize(m.as_ref()).into_iter().collect();
            for t in distinct {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let n = messages.len();
        let idf = df
            .into_iter()
            .map(|(t, d)| (t, ((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        TermWeights { idf, n_docs: n }
    }

    pub fn is_fitted(&self) -> bool {
        self.n_docs > 0
    }

    pub fn weight(&self, message: &str) -> f64 {
        let tokens = tokenize(message);
        if tokens.is_empty() {
            return 0.0;
        }
        let total = tokens.len() as f64;
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t).or_insert(0) += 1;
        }
        let sum: f64 = tf
            .iter()
            .map(|(t, &c)| {
                let idf = self.idf.get(*t).copied().unwrap_or(1.0);
                (c as f64 / total) * idf
            })
            .sum();
        sum / tf.len() as f64
    }
}

fn entropy(changes: &[FileChange]) -> f64 {
    let total: usize = changes.iter().map(|f| f.lines_added + f.lines_deleted).sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    changes
        .iter()
        .filter_map(|f| {
            let c = f.lines_added + f.lines_deleted;
            if c == 0 {
                None
            } else {
                let p = c as f64 / t;
                Some(-p * p.log2())
            }
        })
        .sum()
}

fn classif(message: &str) -> f64 {
    let m = message.to_ascii_lowercase();
    let groups: [(&[&str], f64); 5] = [
        (&["add", "new", "implement", "feature"], 1.0),
        (&["fix", "bug", "error", "fail"], 2.0),
        (&["improv", "enhanc", "refactor", "clean"], 4.0),
        (&["test", "junit", "spec", "coverage"], 5.0),
        (&["doc", "readme", "license", "typo", "comment"], 6.0),
    ];
    for (words, code) in groups {
        if words.iter().any(|w| m.contains(w)) {
            return code;
        }
    }
    7.0
}

fn strip_ws(line: &str) -> String {
    line.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Formatting-only commit: per file, the added and deleted lines are equal
/// once whitespace is removed, and something actually changed.
fn is_formatting(changes: &[FileChange], cfg: &ExtensionConfig) -> bool {
    let mut any = false;
    for f in changes {
        if !in_category(&f.path, &cfg.src_extensions, &[]) {
            return false;
        }
        let mut added: Vec<String> = Vec::new();
        let mut deleted: Vec<String> = Vec::new();
        for line in &f.changed_lines {
            let (sign, body) = line.split_at(1);
            match sign {
                "+" => added.push(strip_ws(body)),
                "-" => deleted.push(strip_ws(body)),
                _ => {}
            }
        }
        if added.is_empty() && deleted.is_empty() {
            continue;
        }
        any = true;
        added.sort();
        deleted.sort();
        if added != deleted {
            return false;
        }
    }
    any
}

/// Comment-only commit: every non-blank changed line starts with a comment
/// prefix for a configured source language.
fn is_comment_only(changes: &[FileChange], cfg: &ExtensionConfig) -> bool {
    let mut any = false;
    for f in changes {
        if !in_category(&f.path, &cfg.src_extensions, &[]) {
            return false;
        }
        for line in &f.changed_lines {
            let body = line[1..].trim();
            if body.is_empty() {
                continue;
            }
            any = true;
            if !cfg.comment_prefixes.iter().any(|p| body.starts_with(p.as_str())) {
                return false;
            }
        }
    }
    any
}

/// The 26 retained commit-level features, in `CLF_FEATURE_NAMES` order.
pub fn commit_features(
    history: &[CommitRecord],
    index: usize,
    idf_model: &TermWeights,
    cfg: &ExtensionConfig,
) -> Result<FeatureVector> {
    if index >= history.len() {
        return Err(Error::Git(format!("commit index {index} out of range")));
    }
    if !idf_model.is_fitted() {
        return Err(Error::Git("term-weight model is not fitted".into()));
    }
    let commit = &history[index];
    let changes = &commit.file_changes;
    let paths: HashSet<&str> = changes.iter().map(|f| f.path.as_str()).collect();
    let top_dirs: HashSet<&str> = changes.iter().map(|f| top_dir(&f.path)).collect();

    let ns = top_dirs.len() as f64;
    let la: usize = changes.iter().map(|f| f.lines_added).sum();
    let ld: usize = changes.iter().map(|f| f.lines_deleted).sum();
    let day_week = Utc
        .timestamp_opt(commit.timestamp, 0)
        .single()
        .map(|d| d.weekday().num_days_from_monday() as f64)
        .unwrap_or(0.0);
    let cm = idf_model.weight(&commit.message);
    let tfc = changes.iter().map(|f| extension(&f.path)).collect::<HashSet<_>>().len() as f64;

    let msg = commit.message.to_ascii_lowercase();
    let is_fix = (msg.contains("fix") || msg.contains("bug")) as i32 as f64;
    let all_in = |exts: &[String], names: &[String]| -> f64 {
        (!changes.is_empty() && changes.iter().all(|f| in_category(&f.path, exts, names))) as i32 as f64
    };
    let is_doc = all_in(&cfg.doc_extensions, &cfg.doc_filenames);
    let is_build = all_in(&cfg.build_extensions, &cfg.build_filenames);
    let is_meta = all_in(&cfg.meta_extensions, &cfg.meta_filenames);
    let is_merge = (commit.parents.len() > 1) as i32 as f64;
    let is_media = all_in(&cfg.media_extensions, &[]);
    let is_src = all_in(&cfg.src_extensions, &[]);
    let frm = is_formatting(changes, cfg) as i32 as f64;
    let com = is_comment_only(changes, cfg) as i32 as f64;

    let prior = &history[..index];
    let prs = prior
        .iter()
        .rev()
        .take(5)
        .filter(|c| label_skip(&c.message) == Label::Skip)
        .count() as f64;
    let pcr = (index > 0 && label_skip(&history[index - 1].message) == Label::Skip) as i32 as f64;
    let sc = (index > 0 && history[index - 1].author == commit.author) as i32 as f64;

    // history of the touched files: prior commits touching any of them
    let mut nuc_files: HashSet<&str> = HashSet::new();
    let mut ndev_authors: HashSet<&str> = HashSet::new();
    let mut last_touch: HashMap<&str, i64> = HashMap::new();
    for c in prior {
        let touches = c.file_changes.iter().any(|f| paths.contains(f.path.as_str()));
        if touches {
            ndev_authors.insert(c.author.as_str());
            for f in &c.file_changes {
                nuc_files.insert(f.path.as_str());
            }
        }
        for f in &c.file_changes {
            if paths.contains(f.path.as_str()) {
                last_touch.insert(f.path.as_str(), c.timestamp);
            }
        }
    }
    let nuc = nuc_files.len() as f64;
    let ndev = ndev_authors.len() as f64;
    let age = if changes.is_empty() {
        0.0
    } else {
        let days: f64 = changes
            .iter()
            .map(|f| match last_touch.get(f.path.as_str()) {
                Some(&ts) => (commit.timestamp - ts).max(0) as f64 / 86_400.0,
                None => 0.0,
            })
            .sum();
        days / changes.len() as f64
    };
    let lt: usize = changes.iter().map(|f| f.size_before).sum();
    let exp = prior.iter().filter(|c| c.author == commit.author).count() as f64;
    let sexp = prior
        .iter()
        .filter(|c| {
            c.author == commit.author
                && c.file_changes.iter().any(|f| top_dirs.contains(top_dir(&f.path)))
        })
        .count() as f64;

    Ok(FeatureVector(vec![
        ns, entropy(changes), la as f64, ld as f64, day_week, cm, tfc, classif(&commit.message),
        is_fix, is_doc, is_build, is_meta, is_merge, is_media, is_src, frm, com, prs, pcr, sc,
        nuc, age, ndev, lt as f64, exp, sexp,
    ]))
}

/// PBS, fail rate and mean committer build count from the runs strictly
/// before the commit. A missing prior build counts as a pass.
pub fn workflow_features(
    history: &[CommitRecord],
    runs: &[WorkflowRecord],
    index: usize,
) -> (f64, f64, f64) {
    let commit = &history[index];
    let prior: Vec<&WorkflowRecord> = runs
        .iter()
        .filter(|r| r.timestamp < commit.timestamp && r.build_result != BuildResult::Skipped)
        .collect();

    let pbs = match prior.last() {
        None => 1.0,
        Some(r) => (r.build_result == BuildResult::Pass) as i32 as f64,
    };

    let mine: Vec<&&WorkflowRecord> = prior.iter().filter(|r| r.committer == commit.author).collect();
    let fail_rate = if mine.is_empty() {
        0.0
    } else {
        mine.iter().filter(|r| r.build_result == BuildResult::Fail).count() as f64 / mine.len() as f64
    };

    let mut per_committer: HashMap<&str, usize> = HashMap::new();
    for r in &prior {
        *per_committer.entry(r.committer.as_str()).or_insert(0) += 1;
    }
    let avg_exp = if per_committer.is_empty() {
        0.0
    } else {
        per_committer.values().sum::<usize>() as f64 / per_committer.len() as f64
    };

    (pbs, fail_rate, avg_exp)
}

fn run_git(repo_path: &Path, args: &[&str]) -> Result<String> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo_path)
        .args(args)
        .output()
        .map_err(|e| Error::Git(format!("failed to run git: {e}")))?;
    if !out.status.success() {
        return Err(Error::Git(format!(
            "git {} failed: {}",
            args.first().copied().unwrap_or(""),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Chronological first-parent history of a branch, with per-file diff stats.
pub fn extract_commits(repo_path: &Path, branch: &str) -> Result<Vec<CommitRecord>> {
    let log = run_git(
        repo_path,
        &[
            "log",
            branch,
            "--first-parent",
            "--reverse",
            "--no-color",
            "--no-renames",
            "-p",
            "--format=%x01%H%x02%an%x02%at%x02%P%x02%B%x03",
        ],
    )?;

    let mut commits = Vec::new();
    for chunk in log.split('\u{1}').skip(1) {
        let (head, patch) = chunk
            .split_once('\u{3}')
            .ok_or_else(|| Error::Git("malformed git log output".into()))?;
        let fields: Vec<&str> = head.split('\u{2}').collect();
        if fields.len() != 5 {
            return Err(Error::Git("malformed git log header".into()));
        }
        let timestamp: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::Git(format!("bad timestamp {:?}", fields[2])))?;
        let parents = fields[3]
            .split_whitespace()
            .map(str::to_string)
            .collect::<Vec<_>>();

        let mut file_changes: Vec<FileChange> = Vec::new();
        for line in patch.lines() {
            if let Some(rest) = line.strip_prefix("diff --git a/") {
                let path = rest
                    .split_once(" b/")
                    .map(|(_, b)| b)
                    .unwrap_or(rest)
                    .to_string();
                file_changes.push(FileChange {
                    path,
                    lines_added: 0,
                    lines_deleted: 0,
                    size_before: 0,
                    changed_lines: Vec::new(),
                });
                continue;
            }
            let Some(current) = file_changes.last_mut() else { continue };
            if line.starts_with("+++") || line.starts_with("---") {
                continue;
            }
            if let Some(body) = line.strip_prefix('+') {
                current.lines_added += 1;
                current.changed_lines.push(format!("+{body}"));
            } else if let Some(body) = line.strip_prefix('-') {
                current.lines_deleted += 1;
                current.changed_lines.push(format!("-{body}"));
            }
        }

        commits.push(CommitRecord {
            hash: fields[0].trim().to_string(),
            author: fields[1].to_string(),
            timestamp,
            parents,
            message: fields[4].trim_end().to_string(),
            file_changes,
        });
    }

    // file sizes before each commit, accumulated from the line deltas
    let mut sizes: HashMap<String, i64> = HashMap::new();
    for c in &mut commits {
        for f in &mut c.file_changes {
            let current = sizes.entry(f.path.clone()).or_insert(0);
            f.size_before = (*current).max(0) as usize;
            *current += f.lines_added as i64 - f.lines_deleted as i64;
        }
    }
    Ok(commits)
}

/// Parse a `commit_hash,build_result,committer,timestamp` runs log and sort
/// it by timestamp.
pub fn load_runs_csv(path: &Path) -> Result<Vec<WorkflowRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::csv(path, 1, "empty file"))?;
    let expected = "commit_hash,build_result,committer,timestamp";
    if header.trim() != expected {
        return Err(Error::csv(path, 1, format!("expected header {expected:?}")));
    }
    let mut runs = Vec::new();
    for (lineno0, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(Error::csv(path, lineno0 + 1, "expected 4 cells"));
        }
        let build_result = match cells[1].trim() {
            "pass" => BuildResult::Pass,
            "fail" => BuildResult::Fail,
            "skipped" => BuildResult::Skipped,
            other => {
                return Err(Error::csv(path, lineno0 + 1, format!("unknown build result {other:?}")))
            }
        };
        let timestamp: i64 = cells[3]
            .trim()
            .parse()
            .map_err(|_| Error::csv(path, lineno0 + 1, format!("bad timestamp {:?}", cells[3])))?;
        runs.push(WorkflowRecord {
            commit_hash: cells[0].trim().to_string(),
            build_result,
            committer: cells[2].trim().to_string(),
            timestamp,
        });
    }
    runs.sort_by_key(|r| r.timestamp);
    Ok(runs)
}

fn kind_and_range(name: &str, values: &[f64]) -> (FeatureKind, f64, f64) {
    match name {
        "is_fix" | "is_doc" | "is_build" | "is_meta" | "is_merge" | "is_media" | "is_src"
        | "frm" | "com" | "pcr" | "sc" | "pbs" => (FeatureKind::Boolean, 0.0, 1.0),
        "day_week" => (FeatureKind::CategoricalCoded, 0.0, 6.0),
        "classif" => (FeatureKind::CategoricalCoded, 1.0, 7.0),
        "prs" => (FeatureKind::Numeric, 0.0, 5.0),
        "fail_rate" => (FeatureKind::Numeric, 0.0, 1.0),
        _ => {
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (FeatureKind::Numeric, min, max)
        }
    }
}

/// One labeled row per commit; 26 columns, or 29 with workflow features.
pub fn build_dataset(
    repo_path: &Path,
    branch: &str,
    runs: Option<&[WorkflowRecord]>,
    include_workflow: bool,
    cfg: &ExtensionConfig,
) -> Result<Dataset> {
    if include_workflow && runs.is_none() {
        return Err(Error::Config("workflow features require a runs log".into()));
    }
    let history = extract_commits(repo_path, branch)?;
    if history.is_empty() {
        return Err(Error::Git(format!("branch {branch} has no commits")));
    }
    let messages: Vec<&str> = history.iter().map(|c| c.message.as_str()).collect();
    let idf = TermWeights::fit(&messages);

    let mut rows = Vec::with_capacity(history.len());
    for i in 0..history.len() {
        let mut x = commit_features(&history, i, &idf, cfg)?;
        if include_workflow {
            let (pbs, fail_rate, avg_exp) = workflow_features(&history, runs.unwrap_or(&[]), i);
            x.0.push(pbs);
            x.0.push(fail_rate);
            x.0.push(avg_exp);
        }
        rows.push((x, label_skip(&history[i].message)));
    }

    let mut names: Vec<&str> = CLF_FEATURE_NAMES.to_vec();
    if include_workflow {
        names.extend(WLF_FEATURE_NAMES);
    }
    let features = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let col: Vec<f64> = rows.iter().map(|(x, _)| x[i]).collect();
            let (kind, min, max) = kind_and_range(name, &col);
            FeatureSpec {
                name: name.to_string(),
                kind,
                min,
                max,
            }
        })
        .collect();
    let provenance = repo_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "repo".into());
    Dataset::new(FeatureSchema::new(features)?, rows, provenance)
}
