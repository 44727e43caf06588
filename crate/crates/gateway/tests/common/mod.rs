#![allow(dead_code)]

use floodmap_core::raster::{AnnotationMask, DemGrid, Pixel, RgbRaster};
use floodmap_core::select::Connectivity;
use floodmap_core::session::{Action, LabelClass, LogHeader, Session, SessionLog};
use floodmap_gateway::pipeline::ReplayData;
use floodmap_gateway::Store;

pub const W: usize = 14;
pub const H: usize = 10;

/// Two hills and a trough, no ties.
pub fn hills(w: usize, h: usize) -> DemGrid {
    let v = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f32, (i / w) as f32);
            let a = 30.0 * (-((x - 3.0).powi(2) + (y - 3.0).powi(2)) / 8.0).exp();
            let b = 20.0 * (-((x - 10.0).powi(2) + (y - 6.0).powi(2)) / 6.0).exp();
            100.0 + a + b + 0.5 * y + 0.001 * i as f32
        })
        .collect();
    DemGrid::new(w, h, 2.0, v).unwrap()
}

pub fn flat(w: usize, h: usize) -> DemGrid {
    DemGrid::new(w, h, 2.0, vec![7.0; w * h]).unwrap()
}

pub fn imagery(w: usize, h: usize) -> RgbRaster {
    RgbRaster::new(w, h, (0..w * h).map(|i| [(i % 251) as u8, 90, 200]).collect()).unwrap()
}

/// A short session over the stored dataset; returns its final mask and log.
pub fn session(store: &Store, id: &str, seed: u32) -> (AnnotationMask, SessionLog) {
    let data = ReplayData::load(store, id).unwrap();
    let ctx = data.context(Connectivity::Four);
    let mut s = Session::new(LogHeader::new(id, &ctx));
    let (w, h) = (data.meta.width as u32, data.meta.height as u32);
    let actions = [
        Action::PointBfs { seed: Pixel::new(seed % w, (seed / 3) % h), tolerance: 0.0 },
        Action::SetLabelClass { class: LabelClass::Dry },
        Action::Brush { center: Pixel::new((seed * 7) % w, (seed * 5) % h), side: 3 },
        Action::SegmentPick { pixel: Pixel::new(w - 1, h - 1), level: 5 },
        Action::Undo,
        Action::SetLabelClass { class: LabelClass::Flooded },
        Action::SegmentPick { pixel: Pixel::new(0, h - 1), level: 3 },
    ];
    for (t, a) in actions.into_iter().enumerate() {
        s.perform(a, t as u64 * 1000, &ctx).unwrap();
    }
    (s.state.mask, s.log)
}
