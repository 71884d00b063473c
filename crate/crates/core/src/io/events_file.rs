//! Binary event, label, and image files.
//!
//! Event file `EVS1`: 16-byte header (magic, width u16, height u16,
//! count u64), then `count` little-endian records (x u16, y u16, t u32
//! microseconds, p i8). Label file `LBL1` and image file `IMG1`: 8-byte
//! header (magic, width u16, height u16) followed by row-major payloads
//! (u8 class indices / f32 intensities).

use std::path::Path;

use super::{atomic_write, ByteReader};
use crate::error::Result;
use crate::events::{EventRecord, EventStream, ImageGrid, LabelGrid};

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    let mut out = Vec::with_capacity(16 + stream.len() * 9);
    out.extend_from_slice(b"EVS1");
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t_us.to_le_bytes());
        out.push(e.p as u8);
    }
    atomic_write(path, &out)
}

/// Reads an event file. `duration_us` supplies the covered duration (from a
/// dataset manifest); when absent, the last timestamp + 1 is used.
pub fn read_events(path: &Path, duration_us: Option<u64>) -> Result<EventStream> {
    let buf = std::fs::read(path)?;
    let mut r = ByteReader::new(&buf);
    r.magic(b"EVS1")?;
    let width = r.u16("width")?;
    let height = r.u16("height")?;
    let count = r.u64("event count")?;
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let x = r.u16("event x")?;
        let y = r.u16("event y")?;
        let t_us = r.u32("event t")?;
        let p = r.i8("event polarity")?;
        events.push(EventRecord { x, y, t_us, p });
    }
    r.finish()?;
    let dur = duration_us
        .unwrap_or_else(|| events.last().map(|e| e.t_us as u64 + 1).unwrap_or(0));
    EventStream::new(width, height, dur, events)
}

pub fn write_label_grid(path: &Path, grid: &LabelGrid) -> Result<()> {
    let mut out = Vec::with_capacity(8 + grid.data.len());
    out.extend_from_slice(b"LBL1");
    out.extend_from_slice(&(grid.width as u16).to_le_bytes());
    out.extend_from_slice(&(grid.height as u16).to_le_bytes());
    out.extend_from_slice(&grid.data);
    atomic_write(path, &out)
}

pub fn read_label_grid(path: &Path) -> Result<LabelGrid> {
    let buf = std::fs::read(path)?;
    let mut r = ByteReader::new(&buf);
    r.magic(b"LBL1")?;
    let width = r.u16("width")? as usize;
    let height = r.u16("height")? as usize;
    let data = r.take(width * height, "label payload")?.to_vec();
    r.finish()?;
    LabelGrid::new(width, height, data)
}

pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    let mut out = Vec::with_capacity(8 + img.data.len() * 4);
    out.extend_from_slice(b"IMG1");
    out.extend_from_slice(&(img.width as u16).to_le_bytes());
    out.extend_from_slice(&(img.height as u16).to_le_bytes());
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &out)
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let buf = std::fs::read(path)?;
    let mut r = ByteReader::new(&buf);
    r.magic(b"IMG1")?;
    let width = r.u16("width")? as usize;
    let height = r.u16("height")? as usize;
    let mut data = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        data.push(r.f32("image payload")?);
    }
    r.finish()?;
    ImageGrid::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn tmpdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("sedn-io-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn event_roundtrip() {
        let evs = vec![
            EventRecord { x: 1, y: 2, t_us: 100, p: 1 },
            EventRecord { x: 3, y: 0, t_us: 250, p: -1 },
        ];
        let s = EventStream::new(8, 8, 1000, evs).unwrap();
        let path = tmpdir().join("roundtrip.evs1");
        write_events(&path, &s).unwrap();
        let back = read_events(&path, Some(1000)).unwrap();
        assert_eq!(back.events, s.events);
        assert_eq!(back.width, 8);
        assert_eq!(back.duration_us, 1000);
    }

    #[test]
    fn trailing_garbage_rejected() {
        let s = EventStream::new(4, 4, 10, vec![]).unwrap();
        let path = tmpdir().join("garbage.evs1");
        write_events(&path, &s).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0xFF);
        std::fs::write(&path, &bytes).unwrap();
        match read_events(&path, None) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let path = tmpdir().join("badmagic.lbl1");
        std::fs::write(&path, b"NOPE\x02\x00\x02\x00aaaa").unwrap();
        match read_label_grid(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_and_image_roundtrip() {
        let d = tmpdir();
        let grid = LabelGrid::new(3, 2, vec![0, 1, 2, 255, 1, 0]).unwrap();
        write_label_grid(&d.join("g.lbl1"), &grid).unwrap();
        assert_eq!(read_label_grid(&d.join("g.lbl1")).unwrap(), grid);

        let img = ImageGrid::new(2, 2, vec![0.25, -1.5, 3.75, 0.0]).unwrap();
        write_image(&d.join("g.img1"), &img).unwrap();
        assert_eq!(read_image(&d.join("g.img1")).unwrap(), img);
    }

    #[test]
    fn truncated_label_reports_offset() {
        let path = tmpdir().join("trunc.lbl1");
        std::fs::write(&path, b"LBL1\x04\x00\x04\x00only5bytes").unwrap();
        match read_label_grid(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
