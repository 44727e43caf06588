//! Action logs, undo/redo and deterministic replay of annotation sessions.
//!
//! A log stores tool parameters, never pixel sets; replay recomputes every
//! selection from the dataset, so a log plus the dataset reproduces the mask
//! bit for bit. Timestamps are carried along but never read.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{AnnotationMask, Dims, Label, NormalizedField, Pixel};
use crate::select::{bfs_select, polygon_bfs_select, Connectivity, Direction, PixelSet};
use crate::topo::{segment_pixels, MultiScaleSegmentation};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("invalid action{}: {reason}", seq.map(|s| format!(" at seq {s}")).unwrap_or_default())]
    InvalidAction { seq: Option<u64>, reason: String },
    #[error("pixel ({x}, {y}) is outside the {dims} grid")]
    OutOfBounds { x: i64, y: i64, dims: Dims },
    #[error("log header does not match the dataset: {0}")]
    HeaderMismatch(String),
    #[error("malformed session log: {0}")]
    Parse(String),
}

impl SessionError {
    pub fn name(&self) -> &'static str {
        match self {
            SessionError::InvalidAction { .. } => "InvalidAction",
            SessionError::OutOfBounds { .. } => "OutOfBounds",
            SessionError::HeaderMismatch(_) => "HeaderMismatch",
            SessionError::Parse(_) => "ParseError",
        }
    }

    fn at(self, seq: u64) -> Self {
        match self {
            SessionError::InvalidAction { reason, .. } => SessionError::InvalidAction { seq: Some(seq), reason },
            other => other,
        }
    }
}

fn invalid(reason: impl Into<String>) -> SessionError {
    SessionError::InvalidAction { seq: None, reason: reason.into() }
}

type Result<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LabelClass {
    #[default]
    Flooded,
    Dry,
}

impl LabelClass {
    pub fn label(self) -> Label {
        match self {
            LabelClass::Flooded => Label::Flooded,
            LabelClass::Dry => Label::Dry,
        }
    }

    /// Flooded regions grow downhill, dry regions uphill.
    pub fn direction(self) -> Direction {
        match self {
            LabelClass::Flooded => Direction::Downstream,
            LabelClass::Dry => Direction::Upstream,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Fill,
    Erase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", deny_unknown_fields)]
pub enum Action {
    Brush { center: Pixel, side: u32 },
    #[serde(rename = "PointBFS")]
    PointBfs { seed: Pixel, tolerance: f64 },
    #[serde(rename = "PolygonBFS")]
    PolygonBfs { vertices: Vec<[f64; 2]>, tolerance: f64 },
    SegmentPick { pixel: Pixel, level: usize },
    SetLevel { level: usize },
    SetLabelClass { class: LabelClass },
    SetMode { mode: Mode },
    Undo,
    Redo,
}

impl Action {
    pub fn is_mutating(&self) -> bool {
        matches!(self, Action::Brush { .. } | Action::PointBfs { .. } | Action::PolygonBfs { .. } | Action::SegmentPick { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRecord {
    pub seq: u64,
    /// Milliseconds; informational only.
    pub timestamp: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolDefaults {
    pub brush_side: u32,
    pub tolerance: f64,
    pub connectivity: Connectivity,
}

impl Default for ToolDefaults {
    fn default() -> Self {
        Self { brush_side: 5, tolerance: 0.0, connectivity: Connectivity::Four }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub dataset_id: String,
    pub width: usize,
    pub height: usize,
    pub thresholds: Vec<f64>,
    pub version: u32,
    pub defaults: ToolDefaults,
}

impl LogHeader {
    pub fn new(dataset_id: impl Into<String>, ctx: &ReplayContext<'_>) -> Self {
        let dims = ctx.field.dims();
        Self {
            dataset_id: dataset_id.into(),
            width: dims.width,
            height: dims.height,
            thresholds: ctx.segmentation.thresholds(),
            version: LOG_VERSION,
            defaults: ToolDefaults { connectivity: ctx.connectivity, ..ToolDefaults::default() },
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    /// The header must name the context's grid, and its thresholds must be a
    /// prefix of the context's (datasets may gain coarser levels later).
    pub fn check(&self, ctx: &ReplayContext<'_>) -> Result<()> {
        if self.version != LOG_VERSION {
            return Err(SessionError::HeaderMismatch(format!("unsupported version {}", self.version)));
        }
        if self.dims() != ctx.field.dims() {
            return Err(SessionError::HeaderMismatch(format!("log grid {} vs dataset {}", self.dims(), ctx.field.dims())));
        }
        let ours = ctx.segmentation.thresholds();
        if self.thresholds.len() > ours.len() || ours[..self.thresholds.len()] != self.thresholds[..] {
            return Err(SessionError::HeaderMismatch(format!("log thresholds {:?} vs dataset {:?}", self.thresholds, ours)));
        }
        if self.defaults.connectivity != ctx.connectivity {
            return Err(SessionError::HeaderMismatch("BFS connectivity differs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionLog {
    pub header: LogHeader,
    pub actions: Vec<ActionRecord>,
}

impl SessionLog {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("logs always serialize")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| SessionError::Parse(e.to_string()))
    }
}

/// Immutable dataset products a session operates on.
#[derive(Debug, Clone, Copy)]
pub struct ReplayContext<'a> {
    pub field: &'a NormalizedField,
    pub segmentation: &'a MultiScaleSegmentation,
    pub connectivity: Connectivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub index: u32,
    pub before: Label,
    pub after: Label,
}

/// Pixel changes made by one action.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Patch {
    pub entries: Vec<PatchEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub mask: AnnotationMask,
    pub label_class: LabelClass,
    pub mode: Mode,
    pub level: usize,
    pub undo_stack: Vec<Patch>,
    pub redo_stack: Vec<Patch>,
}

impl SessionState {
    pub fn new(dims: Dims) -> Self {
        Self {
            mask: AnnotationMask::empty(dims),
            label_class: LabelClass::default(),
            mode: Mode::default(),
            level: 0,
            undo_stack: Vec::new(),
            redo_stack: Vec::new(),
        }
    }

    /// Reverts the latest patch; no-op when there is none.
    pub fn undo(&mut self) {
        if let Some(patch) = self.undo_stack.pop() {
            for e in patch.entries.iter().rev() {
                self.mask.set(e.index as usize, e.before);
            }
            self.redo_stack.push(patch);
        }
    }

    /// Reapplies the latest undone patch; no-op when there is none.
    pub fn redo(&mut self) {
        if let Some(patch) = self.redo_stack.pop() {
            for e in &patch.entries {
                self.mask.set(e.index as usize, e.after);
            }
            self.undo_stack.push(patch);
        }
    }

    fn paint(&mut self, pixels: impl IntoIterator<Item = u32>) {
        let fill = self.label_class.label();
        let mut patch = Patch::default();
        for i in pixels {
            let before = self.mask.get(i as usize);
            let after = match self.mode {
                Mode::Fill => fill,
                Mode::Erase => Label::Unlabeled,
            };
            if before != after {
                self.mask.set(i as usize, after);
                patch.entries.push(PatchEntry { index: i, before, after });
            }
        }
        self.undo_stack.push(patch);
        self.redo_stack.clear();
    }
}

fn check_tolerance(tolerance: f64) -> Result<()> {
    if tolerance.is_finite() && tolerance >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("tolerance must be finite and non-negative, got {tolerance}")))
    }
}

fn check_level(level: usize, ctx: &ReplayContext<'_>) -> Result<()> {
    if level < ctx.segmentation.levels.len() {
        Ok(())
    } else {
        Err(invalid(format!("level {level} does not exist")))
    }
}

/// Pixels of the `side`-wide square whose center is `center`, clipped to the grid.
pub fn brush_pixels(dims: Dims, center: Pixel, side: u32) -> Result<PixelSet> {
    if side == 0 {
        return Err(invalid("brush side must be at least 1"));
    }
    if center.index_in(dims).is_none() {
        return Err(SessionError::OutOfBounds { x: center.x as i64, y: center.y as i64, dims });
    }
    let half = (side as i64 - 1) / 2;
    let (x0, y0) = (center.x as i64 - half, center.y as i64 - half);
    let mut indices = Vec::new();
    for y in y0.max(0)..(y0 + side as i64).min(dims.height as i64) {
        for x in x0.max(0)..(x0 + side as i64).min(dims.width as i64) {
            indices.push(dims.index(x as usize, y as usize) as u32);
        }
    }
    Ok(PixelSet::from_sorted(dims, indices))
}

fn selection(action: &Action, state: &SessionState, ctx: &ReplayContext<'_>) -> Result<PixelSet> {
    let dims = ctx.field.dims();
    let direction = state.label_class.direction();
    let map_select = |e: crate::select::SelectError| match e {
        crate::select::SelectError::OutOfBounds { x, y, dims } => SessionError::OutOfBounds { x, y, dims },
        other => invalid(other.to_string()),
    };
    match action {
        Action::Brush { center, side } => brush_pixels(dims, *center, *side),
        Action::PointBfs { seed, tolerance } => {
            check_tolerance(*tolerance)?;
            bfs_select(ctx.field, *seed, direction, *tolerance, ctx.connectivity).map_err(map_select)
        }
        Action::PolygonBfs { vertices, tolerance } => {
            check_tolerance(*tolerance)?;
            if vertices.iter().flatten().any(|v| !v.is_finite()) {
                return Err(invalid("polygon vertices must be finite"));
            }
            polygon_bfs_select(ctx.field, vertices, direction, *tolerance, ctx.connectivity).map_err(map_select)
        }
        Action::SegmentPick { pixel, level } => {
            check_level(*level, ctx)?;
            segment_pixels(&ctx.segmentation.levels[*level], *pixel).map_err(|e| match e {
                crate::topo::TopoError::OutOfBounds { x, y, dims } => SessionError::OutOfBounds { x, y, dims },
                other => invalid(other.to_string()),
            })
        }
        _ => unreachable!("only mutating actions select pixels"),
    }
}

/// Applies one action. On error the state is left untouched.
pub fn apply_action(state: &mut SessionState, action: &Action, ctx: &ReplayContext<'_>) -> Result<()> {
    if state.mask.dims() != ctx.field.dims() {
        return Err(SessionError::HeaderMismatch("state and dataset grids differ".into()));
    }
    match action {
        Action::SetLevel { level } => {
            check_level(*level, ctx)?;
            state.level = *level;
        }
        Action::SetLabelClass { class } => state.label_class = *class,
        Action::SetMode { mode } => state.mode = *mode,
        Action::Undo => state.undo(),
        Action::Redo => state.redo(),
        _ => {
            let pixels = selection(action, state, ctx)?;
            state.paint(pixels.indices().iter().copied());
        }
    }
    Ok(())
}

/// Folds the log over an empty mask.
pub fn replay(log: &SessionLog, ctx: &ReplayContext<'_>) -> Result<SessionState> {
    log.header.check(ctx)?;
    let levels = log.header.thresholds.len();
    let mut state = SessionState::new(ctx.field.dims());
    let mut last_seq = None;
    for record in &log.actions {
        if last_seq.is_some_and(|s| record.seq <= s) {
            return Err(invalid("seq must increase strictly").at(record.seq));
        }
        last_seq = Some(record.seq);
        if let Action::SegmentPick { level, .. } | Action::SetLevel { level } = record.action {
            if level >= levels {
                return Err(invalid(format!("level {level} is not in the log header")).at(record.seq));
            }
        }
        apply_action(&mut state, &record.action, ctx).map_err(|e| e.at(record.seq))?;
    }
    Ok(state)
}

/// A live session: current state plus the log that reproduces it.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub state: SessionState,
    pub log: SessionLog,
}

impl Session {
    pub fn new(header: LogHeader) -> Self {
        Self { state: SessionState::new(header.dims()), log: SessionLog { header, actions: Vec::new() } }
    }

    /// Applies `action` and records it if it succeeds.
    pub fn perform(&mut self, action: Action, timestamp: u64, ctx: &ReplayContext<'_>) -> Result<()> {
        if let Action::SegmentPick { level, .. } | Action::SetLevel { level } = action {
            if level >= self.log.header.thresholds.len() {
                return Err(invalid(format!("level {level} is not in the log header")));
            }
        }
        apply_action(&mut self.state, &action, ctx)?;
        let seq = self.log.actions.last().map_or(0, |r| r.seq + 1);
        self.log.actions.push(ActionRecord { seq, timestamp, action });
        Ok(())
    }

    /// The checkpoint is the log itself; loading replays it.
    pub fn save_checkpoint(&self) -> Vec<u8> {
        self.log.to_json()
    }

    pub fn load_checkpoint(bytes: &[u8], ctx: &ReplayContext<'_>) -> Result<Self> {
        let log = SessionLog::from_json(bytes)?;
        let state = replay(&log, ctx)?;
        Ok(Self { state, log })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::build_multiscale;

    fn ctx_parts() -> (NormalizedField, MultiScaleSegmentation) {
        let v: Vec<f64> = (0..25).map(|i| ((i % 5) as f64 - 2.0).abs() + (i / 5) as f64 * 0.1).collect();
        let f = NormalizedField::from_values(5, 5, &v).unwrap();
        let ms = build_multiscale(&f, &[0.0, 1.0]).unwrap();
        (f, ms)
    }

    #[test]
    fn brush_square_and_undo_redo() {
        let (f, ms) = ctx_parts();
        let ctx = ReplayContext { field: &f, segmentation: &ms, connectivity: Connectivity::Four };
        let mut s = Session::new(LogHeader::new("d", &ctx));
        s.perform(Action::Brush { center: Pixel::new(2, 2), side: 3 }, 0, &ctx).unwrap();
        assert_eq!(s.state.mask.labeled_count(), 9);
        assert_eq!(s.state.undo_stack[0].entries.len(), 9);
        s.perform(Action::Undo, 1, &ctx).unwrap();
        assert_eq!(s.state.mask.labeled_count(), 0);
        s.perform(Action::Redo, 2, &ctx).unwrap();
        assert_eq!(s.state.mask.labeled_count(), 9);
        let mut fresh = SessionState::new(f.dims());
        fresh.undo();
        assert_eq!(fresh, SessionState::new(f.dims()));
        // Clipped at the corner; even sides extend right and down.
        assert_eq!(brush_pixels(f.dims(), Pixel::new(0, 0), 3).unwrap().len(), 4);
        assert_eq!(brush_pixels(f.dims(), Pixel::new(1, 1), 2).unwrap().indices(), &[6, 7, 11, 12]);
        assert_eq!(brush_pixels(f.dims(), Pixel::new(5, 0), 1).unwrap_err().name(), "OutOfBounds");
    }

    #[test]
    fn erase_and_segment_pick() {
        let (f, ms) = ctx_parts();
        let ctx = ReplayContext { field: &f, segmentation: &ms, connectivity: Connectivity::Four };
        let mut s = Session::new(LogHeader::new("d", &ctx));
        s.perform(Action::SegmentPick { pixel: Pixel::new(0, 0), level: 1 }, 0, &ctx).unwrap();
        assert_eq!(s.state.mask.labeled_count(), 25);
        s.perform(Action::SetMode { mode: Mode::Erase }, 1, &ctx).unwrap();
        s.perform(Action::PointBfs { seed: Pixel::new(0, 4), tolerance: 0.0 }, 2, &ctx).unwrap();
        let erased = bfs_select(&f, Pixel::new(0, 4), Direction::Downstream, 0.0, Connectivity::Four).unwrap();
        assert_eq!(s.state.mask.labeled_count(), 25 - erased.len());
        assert!(erased.indices().iter().all(|&i| s.state.mask.get(i as usize) == Label::Unlabeled));
        let err = s.perform(Action::SegmentPick { pixel: Pixel::new(0, 0), level: 2 }, 3, &ctx).unwrap_err();
        assert_eq!(err.name(), "InvalidAction");
        assert_eq!(s.log.actions.len(), 3);
    }

    #[test]
    fn json_schema() {
        let rec = ActionRecord { seq: 3, timestamp: 17, action: Action::PointBfs { seed: Pixel::new(1, 2), tolerance: 0.05 } };
        let text = serde_json::to_string(&rec).unwrap();
        assert_eq!(text, r#"{"seq":3,"timestamp":17,"action":{"kind":"PointBFS","params":{"seed":{"x":1,"y":2},"tolerance":0.05}}}"#);
        let undo = serde_json::to_string(&Action::Undo).unwrap();
        assert_eq!(undo, r#"{"kind":"Undo"}"#);
        for bad in [
            r#"{"seq":3,"timestamp":17,"extra":1,"action":{"kind":"Undo"}}"#,
            r#"{"seq":3,"timestamp":17,"action":{"kind":"Brush","params":{"center":{"x":1,"y":2},"side":3,"color":1}}}"#,
            r#"{"seq":3,"timestamp":17,"action":{"kind":"Lasso","params":{}}}"#,
        ] {
            assert!(serde_json::from_str::<ActionRecord>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn replay_checks_header_and_order() {
        let (f, ms) = ctx_parts();
        let ctx = ReplayContext { field: &f, segmentation: &ms, connectivity: Connectivity::Four };
        let mut s = Session::new(LogHeader::new("d", &ctx));
        s.perform(Action::Brush { center: Pixel::new(2, 2), side: 1 }, 0, &ctx).unwrap();
        s.perform(Action::Brush { center: Pixel::new(3, 2), side: 1 }, 0, &ctx).unwrap();
        assert_eq!(replay(&s.log, &ctx).unwrap(), s.state);
        let mut log = s.log.clone();
        log.actions[1].seq = 0;
        assert_eq!(replay(&log, &ctx).unwrap_err(), SessionError::InvalidAction { seq: Some(0), reason: "seq must increase strictly".into() });
        let mut log = s.log.clone();
        log.header.width = 4;
        assert_eq!(replay(&log, &ctx).unwrap_err().name(), "HeaderMismatch");
        let loaded = Session::load_checkpoint(&s.save_checkpoint(), &ctx).unwrap();
        assert_eq!(loaded, s);
        assert_eq!(Session::load_checkpoint(b"{not json", &ctx).unwrap_err().name(), "ParseError");
    }
}
