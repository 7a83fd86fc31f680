//! Planning, execution and caching of the evaluation matrix.
//!
//! Every request is identified by (model, dataset, format, source id,
//! rotation). Results are appended to `records.jsonl` in the cache
//! directory as they arrive; [`Cache::compact`] rewrites the file sorted by
//! key so that two runs over the same plan produce the same bytes apart from
//! timestamps. A run that is interrupted can be restarted and only issues
//! the requests that have no successful record yet.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{self, BackendError, BackendRegistry, TokenLogprob};
use crate::dataset::{circular_expand, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{exact_match, in_scheme, EvalCell};
use crate::prompt::{render_prompt_with, PromptFormat, PromptLayout};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CLOZE_FILE: &str = "cloze.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub model: String,
    pub dataset: String,
    pub format: PromptFormat,
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.model, self.dataset, self.format)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPlan {
    pub cells: Vec<CellId>,
    /// Circular instances per dataset, i.e. requests per cell.
    pub instances: BTreeMap<String, u64>,
    pub total_requests: u64,
}

impl RunPlan {
    pub fn requests_per_cell(&self, dataset: &str) -> u64 {
        self.instances.get(dataset).copied().unwrap_or(0)
    }

    /// Requests over every cell of one dataset.
    pub fn requests_for_dataset(&self, dataset: &str) -> u64 {
        let cells = self.cells.iter().filter(|c| c.dataset == dataset).count() as u64;
        cells * self.requests_per_cell(dataset)
    }

    pub fn models(&self) -> Vec<String> {
        let mut v: Vec<String> = self.cells.iter().map(|c| c.model.clone()).collect();
        v.dedup();
        v
    }
}

/// Cells ordered by model, dataset, then format index.
pub fn plan_runs(models: &[&str], datasets: &[&Dataset], formats: &[PromptFormat]) -> Result<RunPlan> {
    if models.is_empty() || datasets.is_empty() || formats.is_empty() {
        return Err(Error::invalid("plan needs at least one model, dataset and format"));
    }
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    let mut instances = BTreeMap::new();
    for d in datasets {
        if instances
            .insert(d.name.clone(), d.records.iter().map(|r| r.options.len() as u64).sum())
            .is_some()
        {
            return Err(Error::DuplicateId(d.name.clone()));
        }
    }
    let mut cells = Vec::new();
    let mut total = 0u64;
    for &m in models {
        for d in datasets {
            for &format in &formats {
                total += instances[&d.name];
                cells.push(CellId {
                    model: m.to_string(),
                    dataset: d.name.clone(),
                    format,
                });
            }
        }
    }
    Ok(RunPlan {
        cells,
        instances,
        total_requests: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub class: String,
    pub message: String,
}

impl From<&BackendError> for RunFailure {
    fn from(e: &BackendError) -> Self {
        RunFailure {
            class: e.class().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub dataset: String,
    pub format: PromptFormat,
    pub source_id: String,
    pub rotation: usize,
    /// SHA-256 of the rendered prompt, hex.
    pub prompt_digest: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub gold_position: usize,
    pub option_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RunFailure>,
    pub attempts: u32,
    pub timestamp: u64,
}

pub type RecordKey = (String, String, PromptFormat, String, usize);

impl RunRecord {
    pub fn key(&self) -> RecordKey {
        (
            self.model.clone(),
            self.dataset.clone(),
            self.format,
            self.source_id.clone(),
            self.rotation,
        )
    }

    pub fn cell(&self) -> CellId {
        CellId {
            model: self.model.clone(),
            dataset: self.dataset.clone(),
            format: self.format,
        }
    }

    pub fn is_success(&self) -> bool {
        self.error.is_none()
    }
}

/// Log-probabilities of one option's text given the bare question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeRecord {
    pub model: String,
    pub dataset: String,
    pub source_id: String,
    pub option_index: usize,
    pub logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RunFailure>,
    pub attempts: u32,
    pub timestamp: u64,
}

pub type ClozeKey = (String, String, String, usize);

impl ClozeRecord {
    pub fn key(&self) -> ClozeKey {
        (
            self.model.clone(),
            self.dataset.clone(),
            self.source_id.clone(),
            self.option_index,
        )
    }
}

trait Keyed: Serialize + DeserializeOwned {
    type Key: Ord + Clone + std::hash::Hash;
    fn record_key(&self) -> Self::Key;
    fn ok(&self) -> bool;
}

impl Keyed for RunRecord {
    type Key = RecordKey;
    fn record_key(&self) -> RecordKey {
        self.key()
    }
    fn ok(&self) -> bool {
        self.is_success()
    }
}

impl Keyed for ClozeRecord {
    type Key = ClozeKey;
    fn record_key(&self) -> ClozeKey {
        self.key()
    }
    fn ok(&self) -> bool {
        self.error.is_none()
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Directory holding the append-only record files.
#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Cache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    pub fn cloze_path(&self) -> PathBuf {
        self.dir.join(CLOZE_FILE)
    }

    /// One record per key; a success beats any failure, otherwise the
    /// latest line wins.
    pub fn load(&self) -> Result<Vec<RunRecord>> {
        load_deduped(&self.records_path())
    }

    pub fn load_cloze(&self) -> Result<Vec<ClozeRecord>> {
        load_deduped(&self.cloze_path())
    }

    /// Rewrites both files deduplicated and sorted by key.
    pub fn compact(&self) -> Result<()> {
        compact_file::<RunRecord>(&self.records_path())?;
        compact_file::<ClozeRecord>(&self.cloze_path())
    }
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut text = String::new();
    BufReader::new(file).read_to_string(&mut text)?;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            // A process killed mid-write leaves a partial final line.
            Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("{}: ignoring torn final line", path.display());
            }
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn dedupe<T: Keyed>(records: Vec<T>) -> BTreeMap<T::Key, T> {
    let mut map: BTreeMap<T::Key, T> = BTreeMap::new();
    for r in records {
        let k = r.record_key();
        match map.get(&k) {
            Some(prev) if prev.ok() && !r.ok() => {}
            _ => {
                map.insert(k, r);
            }
        }
    }
    map
}

fn load_deduped<T: Keyed>(path: &Path) -> Result<Vec<T>> {
    Ok(dedupe(read_lines::<T>(path)?).into_values().collect())
}

fn compact_file<T: Keyed>(path: &Path) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let records = dedupe(read_lines::<T>(path)?);
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for r in records.values() {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Opens `path` for appending, cutting off a torn final line first.
fn open_append(path: &Path) -> Result<BufWriter<File>> {
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)?;
    let len = file.metadata()?.len();
    if len > 0 {
        let mut data = Vec::new();
        file.seek(SeekFrom::Start(0))?;
        file.read_to_end(&mut data)?;
        if data.last() != Some(&b'\n') {
            let keep = data.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            file.set_len(keep as u64)?;
        }
    }
    Ok(BufWriter::new(file))
}

#[derive(Debug, Clone)]
pub struct ExecuteOptions {
    pub max_inflight: usize,
    /// Attempts per request within one execution.
    pub max_attempts: u32,
    /// Overrides the per-(backend, ID set, option count) token budget.
    pub max_new_tokens: Option<usize>,
    pub layout: PromptLayout,
    /// Checked between requests; once set, workers stop picking up work.
    pub cancel: Option<Arc<AtomicBool>>,
    /// Stop after this many records have been written.
    pub stop_after: Option<usize>,
    /// Compact the cache when the run finishes without cancellation.
    pub compact: bool,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        ExecuteOptions {
            max_inflight: 4,
            max_attempts: 3,
            max_new_tokens: None,
            layout: PromptLayout::default(),
            cancel: None,
            stop_after: None,
            compact: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecuteSummary {
    pub planned: u64,
    pub skipped: u64,
    pub issued: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub cancelled: bool,
    pub incomplete_cells: Vec<CellId>,
}

impl ExecuteSummary {
    pub fn is_complete(&self) -> bool {
        !self.cancelled && self.incomplete_cells.is_empty()
    }
}

struct WorkItem<'a> {
    cell: &'a CellId,
    image_ref: Option<&'a str>,
    question: &'a str,
    source_id: &'a str,
    rotation: usize,
    options: Vec<String>,
    gold_position: usize,
    max_new_tokens: usize,
}

/// Runs `f` over `items` on `workers` threads and feeds results to `sink`
/// on the calling thread, in completion order.
fn run_pool<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    cancel: &AtomicBool,
    f: impl Fn(&T) -> R + Sync,
    mut sink: impl FnMut(R) -> Result<()>,
) -> Result<()> {
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, items.len().max(1));
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<R>(workers * 2);
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, f) = (&next, &f);
            scope.spawn(move || loop {
                if cancel.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                if tx.send(f(item)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut result = Ok(());
        for r in rx {
            if result.is_ok() {
                if let Err(e) = sink(r) {
                    cancel.store(true, Ordering::SeqCst);
                    result = Err(e);
                }
            }
        }
        result
    })
}

fn attempt<T>(max_attempts: u32, mut f: impl FnMut() -> Result<T, BackendError>) -> (Result<T, BackendError>, u32) {
    let mut tries = 0;
    loop {
        tries += 1;
        match f() {
            Ok(v) => return (Ok(v), tries),
            Err(e) if tries < max_attempts.max(1) && !matches!(e, BackendError::Capability(_)) => {
                log::debug!("attempt {tries} failed: {e}");
            }
            Err(e) => return (Err(e), tries),
        }
    }
}

/// Issues every planned request that has no successful cached record.
pub fn execute(
    plan: &RunPlan,
    datasets: &[&Dataset],
    registry: &BackendRegistry,
    cache: &Cache,
    options: &ExecuteOptions,
) -> Result<ExecuteSummary> {
    let by_name: HashMap<&str, &Dataset> = datasets.iter().map(|d| (d.name.as_str(), *d)).collect();
    for cell in &plan.cells {
        if registry.get(&cell.model).is_none() {
            return Err(Error::invalid(format!("no backend named `{}`", cell.model)));
        }
        if !by_name.contains_key(cell.dataset.as_str()) {
            return Err(Error::invalid(format!("dataset `{}` not provided", cell.dataset)));
        }
    }

    let done: HashSet<RecordKey> = cache
        .load()?
        .into_iter()
        .filter(RunRecord::is_success)
        .map(|r| r.key())
        .collect();

    let mut budgets: HashMap<(String, PromptFormat, usize), usize> = HashMap::new();
    let mut items = Vec::new();
    let mut summary = ExecuteSummary {
        planned: plan.total_requests,
        ..ExecuteSummary::default()
    };
    for cell in &plan.cells {
        let ds = by_name[cell.dataset.as_str()];
        let backend = registry.get(&cell.model).expect("checked above");
        for record in &ds.records {
            for inst in circular_expand(record) {
                let key = (
                    cell.model.clone(),
                    cell.dataset.clone(),
                    cell.format,
                    inst.source_id.clone(),
                    inst.rotation,
                );
                if done.contains(&key) {
                    summary.skipped += 1;
                    continue;
                }
                let k = inst.options.len();
                let max_new_tokens = match options.max_new_tokens {
                    Some(n) => n,
                    None => {
                        let bkey = (cell.model.clone(), cell.format, k);
                        match budgets.get(&bkey) {
                            Some(&n) => n,
                            None => {
                                let n = backend::max_required_tokens(backend.as_ref(), cell.format.id_set, k)?;
                                budgets.insert(bkey, n);
                                n
                            }
                        }
                    }
                };
                items.push(WorkItem {
                    cell,
                    image_ref: record.image_ref.as_deref(),
                    question: &record.question,
                    source_id: &record.id,
                    rotation: inst.rotation,
                    options: inst.options,
                    gold_position: inst.gold_position,
                    max_new_tokens,
                });
            }
        }
    }

    let cancel = options
        .cancel
        .clone()
        .unwrap_or_else(|| Arc::new(AtomicBool::new(false)));
    let mut writer = open_append(&cache.records_path())?;
    let mut written = 0usize;

    let work = |item: &WorkItem<'_>| -> Result<RunRecord> {
        let backend = registry.get(&item.cell.model).expect("checked above");
        let prompt = render_prompt_with(&options.layout, item.question, &item.options, item.cell.format)?;
        let (result, attempts) = attempt(options.max_attempts, || {
            backend::generate(backend.as_ref(), &prompt, item.image_ref, item.max_new_tokens)
        });
        let (output, token_logprobs, error) = match result {
            Ok(g) => (g.text, g.token_logprobs, None),
            Err(e) => (String::new(), None, Some(RunFailure::from(&e))),
        };
        Ok(RunRecord {
            model: item.cell.model.clone(),
            dataset: item.cell.dataset.clone(),
            format: item.cell.format,
            source_id: item.source_id.to_string(),
            rotation: item.rotation,
            prompt_digest: prompt_digest(&prompt),
            output,
            token_logprobs,
            gold_position: item.gold_position,
            option_count: item.options.len(),
            error,
            attempts,
            timestamp: now(),
        })
    };

    let mut failed_cells: HashSet<CellId> = HashSet::new();
    run_pool(&items, options.max_inflight, &cancel, work, |record| {
        let record = record?;
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        summary.issued += 1;
        if record.is_success() {
            summary.succeeded += 1;
        } else {
            summary.failed += 1;
            failed_cells.insert(record.cell());
        }
        written += 1;
        if options.stop_after.is_some_and(|n| written >= n) {
            cancel.store(true, Ordering::SeqCst);
        }
        Ok(())
    })?;
    drop(writer);

    summary.cancelled = cancel.load(Ordering::SeqCst);
    if summary.cancelled {
        let mut missing: HashMap<&CellId, u64> = HashMap::new();
        let all = cache.load()?;
        let ok: HashSet<RecordKey> = all.iter().filter(|r| r.is_success()).map(|r| r.key()).collect();
        for item in &items {
            let key = (
                item.cell.model.clone(),
                item.cell.dataset.clone(),
                item.cell.format,
                item.source_id.to_string(),
                item.rotation,
            );
            if !ok.contains(&key) {
                *missing.entry(item.cell).or_default() += 1;
            }
        }
        failed_cells.extend(missing.into_keys().cloned());
    } else if options.compact {
        cache.compact()?;
    }
    let mut incomplete: Vec<CellId> = failed_cells.into_iter().collect();
    incomplete.sort();
    summary.incomplete_cells = incomplete;
    Ok(summary)
}

/// Scores every option of every record as a continuation of the bare
/// question, for cloze-style selection.
pub fn execute_cloze(
    models: &[&str],
    datasets: &[&Dataset],
    registry: &BackendRegistry,
    cache: &Cache,
    options: &ExecuteOptions,
) -> Result<ExecuteSummary> {
    for m in models {
        if registry.get(m).is_none() {
            return Err(Error::invalid(format!("no backend named `{m}`")));
        }
    }
    let done: HashSet<ClozeKey> = cache
        .load_cloze()?
        .into_iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.key())
        .collect();
    struct Item<'a> {
        model: &'a str,
        dataset: &'a str,
        record: &'a crate::dataset::QuestionRecord,
        option_index: usize,
    }
    let mut items = Vec::new();
    let mut summary = ExecuteSummary::default();
    for &model in models {
        for ds in datasets {
            for record in &ds.records {
                for option_index in 0..record.options.len() {
                    summary.planned += 1;
                    let key = (model.to_string(), ds.name.clone(), record.id.clone(), option_index);
                    if done.contains(&key) {
                        summary.skipped += 1;
                    } else {
                        items.push(Item {
                            model,
                            dataset: &ds.name,
                            record,
                            option_index,
                        });
                    }
                }
            }
        }
    }
    let cancel = options
        .cancel
        .clone()
        .unwrap_or_else(|| Arc::new(AtomicBool::new(false)));
    let mut writer = open_append(&cache.cloze_path())?;
    let work = |item: &Item<'_>| {
        let backend = registry.get(item.model).expect("checked above");
        let continuation = cloze_continuation(&item.record.options[item.option_index]);
        let (result, attempts) = attempt(options.max_attempts, || {
            backend::score_continuation(
                backend.as_ref(),
                &item.record.question,
                item.record.image_ref.as_deref(),
                &continuation,
            )
        });
        let (logprobs, error) = match result {
            Ok(v) => (v, None),
            Err(e) => (Vec::new(), Some(RunFailure::from(&e))),
        };
        ClozeRecord {
            model: item.model.to_string(),
            dataset: item.dataset.to_string(),
            source_id: item.record.id.clone(),
            option_index: item.option_index,
            logprobs,
            error,
            attempts,
            timestamp: now(),
        }
    };
    run_pool(&items, options.max_inflight, &cancel, work, |r| {
        serde_json::to_writer(&mut writer, &r)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        summary.issued += 1;
        if r.error.is_none() {
            summary.succeeded += 1;
        } else {
            summary.failed += 1;
        }
        Ok(())
    })?;
    drop(writer);
    summary.cancelled = cancel.load(Ordering::SeqCst);
    if !summary.cancelled && options.compact {
        cache.compact()?;
    }
    Ok(summary)
}

/// Option text as scored after the question: separated by one space.
pub fn cloze_continuation(option: &str) -> String {
    format!(" {option}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteCell {
    pub cell: CellId,
    pub expected: Option<u64>,
    pub succeeded: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub cells: Vec<EvalCell>,
    pub incomplete: Vec<IncompleteCell>,
}

/// Groups records into cells. With a plan, cells need exactly the planned
/// number of successful records; without one, any failed record makes the
/// cell incomplete. Incomplete cells are reported, not aggregated.
pub fn aggregate(records: &[RunRecord], plan: Option<&RunPlan>) -> Result<Aggregation> {
    let mut groups: BTreeMap<CellId, Vec<&RunRecord>> = BTreeMap::new();
    let mut seen: HashSet<RecordKey> = HashSet::new();
    for r in records {
        if !seen.insert(r.key()) {
            return Err(Error::DuplicateId(format!("{} {}#{}", r.cell(), r.source_id, r.rotation)));
        }
        groups.entry(r.cell()).or_default().push(r);
    }
    let planned: Vec<CellId> = match plan {
        Some(p) => p.cells.clone(),
        None => groups.keys().cloned().collect(),
    };
    let mut cells = Vec::new();
    let mut incomplete = Vec::new();
    for cell in planned {
        let rs = groups.get(&cell).map(Vec::as_slice).unwrap_or(&[]);
        let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.is_success()).collect();
        let failed = (rs.len() - ok.len()) as u64;
        let expected = plan.map(|p| p.requests_per_cell(&cell.dataset));
        let complete = match expected {
            Some(n) => ok.len() as u64 == n && n > 0,
            None => failed == 0 && !ok.is_empty(),
        };
        if !complete {
            incomplete.push(IncompleteCell {
                cell,
                expected,
                succeeded: ok.len() as u64,
                failed,
            });
            continue;
        }
        cells.push(eval_cell(&cell, &ok)?);
    }
    Ok(Aggregation { cells, incomplete })
}

fn eval_cell(cell: &CellId, records: &[&RunRecord]) -> Result<EvalCell> {
    let width = records.iter().map(|r| r.option_count).max().unwrap_or(0);
    let mut selected = vec![0u64; width];
    let mut present = vec![0u64; width];
    let mut correct_at = vec![0u64; width];
    let (mut correct, mut covered) = (0u64, 0u64);
    let mut id_cache: HashMap<usize, Vec<String>> = HashMap::new();
    for r in records {
        if r.gold_position >= r.option_count {
            return Err(Error::Inconsistent(format!(
                "{} {}: gold position {} of {}",
                cell, r.source_id, r.gold_position, r.option_count
            )));
        }
        let ids = match id_cache.get(&r.option_count) {
            Some(ids) => ids,
            None => {
                let ids = cell.format.id_set.ids(r.option_count)?;
                id_cache.entry(r.option_count).or_insert(ids)
            }
        };
        for p in present.iter_mut().take(r.option_count) {
            *p += 1;
        }
        if let Some(pos) = in_scheme(&r.output, ids) {
            covered += 1;
            selected[pos] += 1;
        }
        if exact_match(&r.output, &ids[r.gold_position]) {
            correct += 1;
            correct_at[r.gold_position] += 1;
        }
    }
    let n = records.len() as u64;
    let counts: HashSet<usize> = records.iter().map(|r| r.option_count).collect();
    Ok(EvalCell {
        model: cell.model.clone(),
        dataset: cell.dataset.clone(),
        format: cell.format,
        n,
        accuracy: correct as f64 / n as f64,
        coverage: covered as f64 / n as f64,
        position_selected: selected,
        position_present: present,
        position_correct: correct_at,
        option_count: (counts.len() == 1).then(|| records[0].option_count),
    })
}

/// Reads a JSONL stream of run records (for tools that pipe records).
pub fn read_records<R: Read>(reader: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: PathBuf::from("<stream>"),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
