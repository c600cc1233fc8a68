//! Temporal consolidation: one scrapbook page raster per day.
//!
//! Items are tiled left-to-right, top-to-bottom in bucket order. Each tile is
//! `tile_width` wide; a row is as tall as its tallest tile. Text is drawn with
//! the bundled 8x8 bitmap font at 2x, so rendering never depends on system fonts.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use font8x8::UnicodeFonts;
use image::codecs::jpeg::JpegEncoder;
use image::imageops::{self, FilterType};
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, MediaItem, MediaKind};
use crate::error::{Error, Result};
use crate::forgetting::DegradationState;

pub const FONT_ID: &str = "font8x8-basic-x2";
const FONT_SCALE: u32 = 2;
const GLYPH: u32 = 8 * FONT_SCALE;
const PAD: u32 = 8;
/// JPEG quality of freshly consolidated pages.
pub const FRESH_QUALITY: u8 = 100;
pub const DEFAULT_KEYFRAMES: usize = 4;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageLayout {
    pub page_width: u32,
    pub tile_width: u32,
    pub text_line_height: u32,
    pub font: String,
}

impl Default for PageLayout {
    fn default() -> Self {
        PageLayout {
            page_width: 1024,
            tile_width: 512,
            text_line_height: 20,
            font: FONT_ID.to_string(),
        }
    }
}

impl PageLayout {
    pub fn columns(&self) -> u32 {
        self.page_width / self.tile_width.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_width < 2 * PAD + GLYPH || self.page_width == 0 {
            return Err(Error::Layout(format!("tile width {} too narrow", self.tile_width)));
        }
        if self.page_width % self.tile_width != 0 {
            return Err(Error::Layout(format!(
                "page width {} is not a multiple of tile width {}",
                self.page_width, self.tile_width
            )));
        }
        if self.text_line_height < GLYPH {
            return Err(Error::Layout(format!(
                "text line height {} below glyph height {GLYPH}",
                self.text_line_height
            )));
        }
        if self.font != FONT_ID {
            return Err(Error::Layout(format!("unknown font `{}`", self.font)));
        }
        Ok(())
    }

    fn chars_per_line(&self) -> usize {
        ((self.tile_width - 2 * PAD) / GLYPH) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    /// Maps a box from a `from_w x from_h` page onto a `to_w x to_h` page.
    pub fn rescale(&self, from_w: u32, from_h: u32, to_w: u32, to_h: u32) -> Rect {
        let map = |v: u32, from: u32, to: u32, ceil: bool| -> u32 {
            let num = v as u64 * to as u64;
            let q = if ceil { num.div_ceil(from as u64) } else { num / from as u64 };
            q.min(to as u64) as u32
        };
        let x0 = map(self.x, from_w, to_w, false).min(to_w - 1);
        let y0 = map(self.y, from_h, to_h, false).min(to_h - 1);
        let x1 = map(self.x + self.w, from_w, to_w, true).max(x0 + 1);
        let y1 = map(self.y + self.h, from_h, to_h, true).max(y0 + 1);
        Rect {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutBox {
    pub item_id: String,
    #[serde(flatten)]
    pub rect: Rect,
}

/// A consolidated day. The raster lives in `<page_id>.jpg`; everything else is the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrapbookPage {
    pub page_id: String,
    pub date: NaiveDate,
    pub source_ids: Vec<String>,
    #[serde(skip)]
    pub raster: Vec<u8>,
    pub width: u32,
    pub height: u32,
    /// Dimensions at consolidation time; degraded sizes are derived from these.
    pub base_width: u32,
    pub base_height: u32,
    pub fidelity: DegradationState,
    /// Item boxes in current page pixels.
    pub layout: Vec<LayoutBox>,
    /// Perceived page text, recorded at build time for answer context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_text: Option<String>,
}

pub fn page_id_for(date: NaiveDate) -> String {
    format!("page-{}", date.format("%Y-%m-%d"))
}

/// Returns the length of the stored JPEG buffer.
pub fn page_bytes(page: &ScrapbookPage) -> usize {
    page.raster.len()
}

impl ScrapbookPage {
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |message: String| Error::Page {
            page_id: self.page_id.clone(),
            message,
        };
        if self.source_ids.is_empty() {
            return Err(fail("no source items".into()));
        }
        for b in &self.layout {
            if !b.rect.fits_within(self.width, self.height) {
                return Err(fail(format!("layout box of `{}` outside page", b.item_id)));
            }
        }
        let (w, h) = raster_dimensions(&self.raster).map_err(|e| fail(e.to_string()))?;
        if (w, h) != (self.width, self.height) {
            return Err(fail(format!(
                "raster is {w}x{h}, sidecar says {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<RgbImage> {
        decode_jpeg(&self.raster).map_err(|e| Error::Page {
            page_id: self.page_id.clone(),
            message: format!("undecodable raster: {e}"),
        })
    }

    /// Base layout boxes mapped onto the current raster size.
    pub fn rescaled_layout(&self, width: u32, height: u32) -> Vec<LayoutBox> {
        self.layout
            .iter()
            .map(|b| LayoutBox {
                item_id: b.item_id.clone(),
                rect: b.rect.rescale(self.width, self.height, width, height),
            })
            .collect()
    }
}

pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100)).encode_image(img)?;
    Ok(buf)
}

pub fn decode_jpeg(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Jpeg)?.to_rgb8())
}

pub fn raster_dimensions(bytes: &[u8]) -> Result<(u32, u32)> {
    Ok(image::ImageReader::with_format(std::io::Cursor::new(bytes), ImageFormat::Jpeg)
        .into_dimensions()?)
}

/// What a tile draws for one item.
#[derive(Debug, Clone)]
pub enum TileContent {
    Text { header: String, body: String },
    Image(RgbImage),
    Keyframes(Vec<RgbImage>),
}

#[derive(Debug, Clone)]
pub struct PageItem<'a> {
    pub item: &'a MediaItem,
    pub content: TileContent,
}

pub fn text_header(item: &MediaItem) -> String {
    let hhmm = item.timestamp.format("%H:%M");
    match item.subject() {
        Some(s) if !s.trim().is_empty() => format!("TS {hhmm} | {}", s.trim()),
        _ => format!("TS {hhmm}"),
    }
}

/// Decodes the media of `items` into tile content. Videos become `keyframes` frames.
pub fn load_page_items<'a>(
    corpus: &Corpus,
    items: &[&'a MediaItem],
    keyframes: usize,
) -> Result<Vec<PageItem<'a>>> {
    items
        .iter()
        .map(|&item| {
            let content = match item.kind {
                MediaKind::Text => TileContent::Text {
                    header: text_header(item),
                    body: item.payload.clone(),
                },
                MediaKind::Image => {
                    let img = image::open(corpus.media_path(item)).map_err(|e| Error::Media {
                        id: item.id.clone(),
                        message: format!("undecodable image: {e}"),
                    })?;
                    TileContent::Image(img.to_rgb8())
                }
                MediaKind::Video => TileContent::Keyframes(crate::video::video_keyframes(
                    item,
                    &corpus.media_path(item),
                    keyframes,
                )?),
            };
            Ok(PageItem { item, content })
        })
        .collect()
}

/// Greedy word wrap to `width` characters; words longer than a line are split.
pub fn wrap_text(text: &str, width: usize) -> Vec<String> {
    let width = width.max(1);
    let mut lines = Vec::new();
    for para in text.split('\n') {
        let mut line = String::new();
        for word in para.split_whitespace() {
            let mut word: Vec<char> = word.chars().collect();
            loop {
                let used = line.chars().count();
                let sep = usize::from(used > 0);
                if used + sep + word.len() <= width {
                    if sep == 1 {
                        line.push(' ');
                    }
                    line.extend(word.iter());
                    break;
                }
                if used > 0 {
                    lines.push(std::mem::take(&mut line));
                    continue;
                }
                let rest = word.split_off(width);
                lines.push(word.iter().collect());
                word = rest;
            }
        }
        lines.push(line);
    }
    lines
}

fn scaled_height(w: u32, h: u32, target_w: u32) -> u32 {
    ((h as u64 * target_w as u64 + w as u64 / 2) / w.max(1) as u64).max(1) as u32
}

fn text_lines(header: &str, body: &str, layout: &PageLayout) -> Vec<String> {
    let cpl = layout.chars_per_line();
    let mut lines = wrap_text(header, cpl);
    lines.extend(wrap_text(body, cpl));
    lines
}

/// Height of the tile `content` occupies under `layout`.
pub fn tile_height(content: &TileContent, layout: &PageLayout) -> u32 {
    match content {
        TileContent::Text { header, body } => {
            2 * PAD + text_lines(header, body, layout).len() as u32 * layout.text_line_height
        }
        TileContent::Image(img) => scaled_height(img.width(), img.height(), layout.tile_width),
        TileContent::Keyframes(frames) => {
            let half = layout.tile_width / 2;
            frames
                .chunks(2)
                .map(|row| {
                    row.iter()
                        .map(|f| scaled_height(f.width(), f.height(), half))
                        .max()
                        .unwrap_or(1)
                })
                .sum::<u32>()
                .max(1)
        }
    }
}

/// Row-major placement of tiles with the given heights. Returns boxes and page height.
pub fn plan_layout(heights: &[u32], layout: &PageLayout) -> (Vec<Rect>, u32) {
    let cols = layout.columns().max(1) as usize;
    let mut rects = Vec::with_capacity(heights.len());
    let mut y = 0;
    for row in heights.chunks(cols) {
        for (c, &h) in row.iter().enumerate() {
            rects.push(Rect {
                x: c as u32 * layout.tile_width,
                y,
                w: layout.tile_width,
                h,
            });
        }
        y += row.iter().copied().max().unwrap_or(0);
    }
    (rects, y)
}

fn draw_glyph(canvas: &mut RgbImage, x: u32, y: u32, ch: char) {
    let glyph = font8x8::BASIC_FONTS
        .get(ch)
        .or_else(|| font8x8::BASIC_FONTS.get('?'))
        .unwrap_or([0; 8]);
    for (row, bits) in glyph.iter().enumerate() {
        for col in 0..8u32 {
            if bits & (1 << col) == 0 {
                continue;
            }
            for dy in 0..FONT_SCALE {
                for dx in 0..FONT_SCALE {
                    let px = x + col * FONT_SCALE + dx;
                    let py = y + row as u32 * FONT_SCALE + dy;
                    if px < canvas.width() && py < canvas.height() {
                        canvas.put_pixel(px, py, INK);
                    }
                }
            }
        }
    }
}

fn draw_tile(canvas: &mut RgbImage, rect: Rect, content: &TileContent, layout: &PageLayout) {
    match content {
        TileContent::Text { header, body } => {
            for (i, line) in text_lines(header, body, layout).iter().enumerate() {
                let y = rect.y + PAD + i as u32 * layout.text_line_height;
                for (j, ch) in line.chars().enumerate() {
                    draw_glyph(canvas, rect.x + PAD + j as u32 * GLYPH, y, ch);
                }
            }
        }
        TileContent::Image(img) => {
            let h = scaled_height(img.width(), img.height(), rect.w);
            let scaled = imageops::resize(img, rect.w, h, FilterType::Triangle);
            imageops::replace(canvas, &scaled, rect.x as i64, rect.y as i64);
        }
        TileContent::Keyframes(frames) => {
            let half = rect.w / 2;
            let mut y = rect.y;
            for row in frames.chunks(2) {
                let mut row_h = 0;
                for (c, f) in row.iter().enumerate() {
                    let h = scaled_height(f.width(), f.height(), half);
                    let scaled = imageops::resize(f, half, h, FilterType::Triangle);
                    imageops::replace(canvas, &scaled, (rect.x + c as u32 * half) as i64, y as i64);
                    row_h = row_h.max(h);
                }
                y += row_h;
            }
        }
    }
}

/// Renders one day's items (already in bucket order) into a fresh page.
pub fn consolidate(date: NaiveDate, items: &[PageItem<'_>], layout: &PageLayout) -> Result<ScrapbookPage> {
    layout.validate()?;
    let page_id = page_id_for(date);
    if items.is_empty() {
        return Err(Error::Page {
            page_id,
            message: "no items to consolidate".into(),
        });
    }
    if let Some(stray) = items.iter().find(|p| p.item.day() != date) {
        return Err(Error::Page {
            page_id,
            message: format!("item `{}` is not from {date}", stray.item.id),
        });
    }
    let heights: Vec<u32> = items.iter().map(|p| tile_height(&p.content, layout)).collect();
    let (rects, height) = plan_layout(&heights, layout);
    let mut canvas = RgbImage::from_pixel(layout.page_width, height, BACKGROUND);
    for (p, rect) in items.iter().zip(&rects) {
        draw_tile(&mut canvas, *rect, &p.content, layout);
    }
    let raster = encode_jpeg(&canvas, FRESH_QUALITY)?;
    Ok(ScrapbookPage {
        page_id,
        date,
        source_ids: items.iter().map(|p| p.item.id.clone()).collect(),
        raster,
        width: layout.page_width,
        height,
        base_width: layout.page_width,
        base_height: height,
        fidelity: DegradationState::fresh(),
        layout: items
            .iter()
            .zip(rects)
            .map(|(p, rect)| LayoutBox {
                item_id: p.item.id.clone(),
                rect,
            })
            .collect(),
        fused_text: None,
    })
}

/// One `<page_id>.jpg` plus `<page_id>.json` sidecar per page.
pub struct PageStore {
    dir: PathBuf,
}

impl PageStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PageStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn raster_path(&self, page_id: &str) -> PathBuf {
        self.dir.join(format!("{page_id}.jpg"))
    }

    pub fn sidecar_path(&self, page_id: &str) -> PathBuf {
        self.dir.join(format!("{page_id}.json"))
    }

    pub fn save(&self, page: &ScrapbookPage) -> Result<()> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| Error::io(format!("create {}", self.dir.display()), e))?;
        crate::util::write_atomic(&self.raster_path(&page.page_id), &page.raster)?;
        crate::util::write_atomic(&self.sidecar_path(&page.page_id), &serde_json::to_vec_pretty(page)?)
    }

    pub fn exists(&self, page_id: &str) -> bool {
        self.raster_path(page_id).is_file() && self.sidecar_path(page_id).is_file()
    }

    pub fn load(&self, page_id: &str) -> Result<ScrapbookPage> {
        let sidecar = self.sidecar_path(page_id);
        if !sidecar.is_file() {
            return Err(Error::MissingSidecar(page_id.to_string()));
        }
        let bytes = fs::read(&sidecar).map_err(|e| Error::io(format!("read {}", sidecar.display()), e))?;
        let mut page: ScrapbookPage = serde_json::from_slice(&bytes)?;
        let raster = self.raster_path(page_id);
        page.raster = fs::read(&raster).map_err(|e| Error::io(format!("read {}", raster.display()), e))?;
        Ok(page)
    }

    /// The sidecar alone; `raster` is left empty.
    pub fn load_sidecar(&self, page_id: &str) -> Result<ScrapbookPage> {
        let sidecar = self.sidecar_path(page_id);
        if !sidecar.is_file() {
            return Err(Error::MissingSidecar(page_id.to_string()));
        }
        let bytes = fs::read(&sidecar).map_err(|e| Error::io(format!("read {}", sidecar.display()), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Page ids with a sidecar on disk, sorted.
    pub fn page_ids(&self) -> Result<Vec<String>> {
        if !self.dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| Error::io(format!("list {}", self.dir.display()), e))? {
            let path = entry.map_err(|e| Error::io("list pages", e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem() {
                    ids.push(stem.to_string_lossy().into_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
