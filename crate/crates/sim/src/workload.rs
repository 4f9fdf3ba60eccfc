//! Workload spec files for `l2hsim gen`.
//!
//! A single workload sets `kind` and its parameters at the top level. A mix
//! sets `kind = mix` and gives one `[core.N]` section per bound core.
//!
//! ```text
//! kind = mix
//! seed = 7
//!
//! [core.0]
//! kind = streaming
//! footprint = 64MB
//! accesses = 100000
//! icount_min = 24
//! icount_max = 25
//!
//! [core.1]
//! kind = zipfian
//! footprint = 4MB
//! zipf_s = 0.6
//! ```

use std::path::Path;

use l2h_core::{WorkloadKind, WorkloadParams, WorkloadSpec};

use crate::kv::{parse_number, parse_size, Document, Entry, KvError};

fn parse_kind(value: &str) -> Result<WorkloadKind, String> {
    Ok(match value {
        "streaming" | "stream" => WorkloadKind::Streaming,
        "loop" | "working_set_loop" => WorkloadKind::WorkingSetLoop,
        "zipfian" | "zipf" => WorkloadKind::Zipfian,
        "mix" => WorkloadKind::Mix(Vec::new()),
        other => return Err(format!("unknown workload kind `{other}`")),
    })
}

struct Partial {
    kind: Option<WorkloadKind>,
    params: WorkloadParams,
    core: Option<usize>,
    seed: Option<u64>,
}

fn apply(doc: &Document, entries: &[Entry], allow_core: bool) -> Result<Partial, KvError> {
    let mut p = Partial { kind: None, params: WorkloadParams::default(), core: None, seed: None };
    for e in entries {
        let fail = |m: String| doc.error(e.line, m);
        let v = e.value.as_str();
        match e.key.as_str() {
            "kind" => p.kind = Some(parse_kind(v).map_err(fail)?),
            "seed" => p.seed = Some(parse_number(v, "seed").map_err(fail)?),
            "core" if allow_core => p.core = Some(parse_number(v, "core index").map_err(fail)?),
            "footprint" => p.params.footprint_bytes = parse_size(v).map_err(fail)?,
            "accesses" => p.params.access_count = parse_number(v, "access count").map_err(fail)?,
            "zipf_s" => p.params.zipf_s = parse_number(v, "zipf exponent").map_err(fail)?,
            "pc_pool" => p.params.pc_pool_size = parse_number(v, "pc pool size").map_err(fail)?,
            "stride" => p.params.stride = parse_size(v).map_err(fail)?,
            "icount_min" => p.params.icount_min = parse_number(v, "icount").map_err(fail)?,
            "icount_max" => p.params.icount_max = parse_number(v, "icount").map_err(fail)?,
            "write_ratio" => p.params.write_ratio = parse_number(v, "write ratio").map_err(fail)?,
            other => return Err(fail(format!("unknown workload key `{other}`"))),
        }
    }
    Ok(p)
}

pub fn parse_workload(path: &Path, text: &str) -> Result<WorkloadSpec, KvError> {
    let doc = Document::parse(path, text)?;
    let top = apply(&doc, &doc.sections[0].entries, true)?;
    let seed = top.seed.unwrap_or(0);
    let kind = top.kind.ok_or_else(|| doc.error(1, "missing `kind`"))?;
    match kind {
        WorkloadKind::Mix(_) => {
            let mut children = Vec::new();
            for section in &doc.sections[1..] {
                let core: usize =
                    section.name.strip_prefix("core.").and_then(|c| c.parse().ok()).ok_or_else(|| {
                        doc.error(section.line, format!("expected [core.N], found [{}]", section.name))
                    })?;
                let child = apply(&doc, &section.entries, false)?;
                let kind = child.kind.ok_or_else(|| doc.error(section.line, "missing `kind`"))?;
                if matches!(kind, WorkloadKind::Mix(_)) {
                    return Err(doc.error(section.line, "mix children cannot be mixes"));
                }
                children.push(WorkloadSpec::new(kind, child.params, core, child.seed.unwrap_or(seed)));
            }
            Ok(WorkloadSpec::new(WorkloadKind::Mix(children), top.params, 0, seed))
        }
        kind => {
            if let Some(section) = doc.sections.get(1) {
                return Err(doc.error(section.line, "sections are only allowed in a mix"));
            }
            Ok(WorkloadSpec::new(kind, top.params, top.core.unwrap_or(0), seed))
        }
    }
}
