//! Seeded synthetic corpus and benchmark for offline tests and demos.
//!
//! Each day has a lunch email, a trip note and a photo. Every day uses its own
//! place, people and city names, so a question about one day matches that day's
//! nodes and no other. Questions ask about the day's most salient entity.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{write_questions, BenchmarkQuestion, QuestionType};

const ADJECTIVES: [&str; 64] = [
    "amber", "brisk", "copper", "dusky", "elder", "fabled", "gilded", "hollow", "ivory", "jade", "kindled",
    "lunar", "mossy", "noble", "opal", "pewter", "quiet", "russet", "silver", "tawny", "umber", "velvet",
    "willow", "yonder", "zephyr", "azure", "bramble", "cinder", "dapple", "ember", "frosted", "granite",
    "hazel", "indigo", "juniper", "kestrel", "linen", "marble", "nimbus", "ochre", "pepper", "quartz",
    "rustic", "saffron", "thistle", "upland", "vesper", "wicker", "yarrow", "zinnia", "basalt", "cobalt",
    "driftwood", "fennel", "garnet", "heather", "iron", "lantern", "meadow", "nutmeg", "orchard", "pine",
    "rowan", "sorrel",
];

const NOUNS: [&str; 64] = [
    "fig", "heron", "anchor", "lantern", "otter", "thimble", "acorn", "badger", "compass", "dovetail",
    "falcon", "gable", "harbor", "inkwell", "jetty", "kettle", "lark", "mantle", "nettle", "orchid",
    "pelican", "quill", "raven", "saddle", "tulip", "urchin", "vine", "walnut", "yew", "zither", "bellows",
    "cairn", "drum", "easel", "ferret", "goblet", "hammock", "icicle", "jasper", "keel", "locket", "magpie",
    "nook", "oar", "plover", "quay", "reed", "spindle", "trellis", "umbra", "vale", "wren", "yoke",
    "barrow", "crane", "dune", "flint", "grove", "hearth", "isle", "kiln", "loom", "mill", "spire",
];

const FIRST_NAMES: [&str; 64] = [
    "Anna", "Bruno", "Clara", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Keiko", "Lars",
    "Mira", "Nils", "Olga", "Pavel", "Quinn", "Rosa", "Sven", "Tariq", "Uma", "Viktor", "Wanda", "Xavier",
    "Yara", "Zoltan", "Agnes", "Boris", "Celine", "Dario", "Edith", "Felix", "Gianna", "Henrik", "Ilse",
    "Jasper", "Katya", "Leon", "Marta", "Nadia", "Oskar", "Petra", "Rafael", "Selma", "Tomas", "Ulla",
    "Vera", "Walter", "Yusuf", "Zelda", "Ada", "Bastian", "Cora", "Desmond", "Elif", "Florin", "Hedda",
    "Ivo", "Juno", "Kasimir", "Linnea", "Matteo", "Noor", "Orla",
];

const SURNAMES: [&str; 64] = [
    "Berg", "Castell", "Dunmore", "Eklund", "Fairweather", "Gallo", "Haugen", "Ishikawa", "Jovanovic",
    "Kowalski", "Lindqvist", "Moreau", "Nakamura", "Okafor", "Petrov", "Quaresma", "Rasmussen", "Sorensen",
    "Takahashi", "Ulrich", "Varga", "Whitlock", "Xu", "Yilmaz", "Zeller", "Abbott", "Brandt", "Carvalho",
    "Delacroix", "Engel", "Fitzgerald", "Grimaldi", "Holloway", "Ivanova", "Jablonski", "Kaur", "Lombardi",
    "Mendoza", "Novak", "Ortega", "Pellegrini", "Quigley", "Rinaldi", "Schubert", "Tanaka", "Uddin",
    "Vasquez", "Winthrop", "Yamamoto", "Zhivago", "Albrecht", "Bianchi", "Costa", "Dahl", "Esposito",
    "Falk", "Gustafsson", "Hakimi", "Iverson", "Janssen", "Keller", "Laurent", "Moretti", "Nyberg",
];

const CITIES: [&str; 64] = [
    "Port Alder", "North Wexley", "Lake Carrow", "East Brinmoor", "Glen Ashby", "Saint Orrin", "Upper Tolvik",
    "West Fallow", "Cape Mirren", "Fort Halden", "New Quarrel", "Old Swanby", "Mount Ellery", "South Rooke",
    "Bay Trennick", "Little Dunsey", "Great Wolvey", "Kings Barrow", "Castle Yarne", "Bridge Ottery",
    "Market Penhal", "Vale Corrigan", "Green Oxley", "High Fenwick", "Long Ashcombe", "Red Hallam",
    "White Kirkby", "Black Torrin", "Point Lessing", "River Staith", "Port Dolan", "North Gairloch",
    "Lake Umberley", "East Quenby", "Glen Rosskeen", "Saint Breward", "Upper Nyland", "West Ilsley",
    "Cape Farrow", "Fort Jessop", "New Harlowe", "Old Pemberly", "Mount Vance", "South Ickworth",
    "Bay Wendron", "Little Zennor", "Great Bixley", "Kings Avoca", "Castle Dunmere", "Bridge Coverack",
    "Market Lydd", "Vale Sorrento", "Green Tilbury", "High Brackley", "Long Melford", "Red Kessock",
    "White Yelverton", "Black Ormsby", "Point Gunwalloe", "River Axmouth", "Port Ivybridge",
    "North Treleigh", "Lake Hesketh", "East Varley",
];

const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "orange", "purple", "teal", "grey"];
const THINGS: [&str; 8] = ["umbrella", "teapot", "bicycle", "kite", "notebook", "lamp", "scarf", "vase"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub days: usize,
    pub start: NaiveDate,
    /// Days between the last corpus day and the suggested `now`.
    pub age_offset: i64,
    pub seed: u64,
    pub photo_width: u32,
    pub photo_height: u32,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            days: 60,
            start: NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date"),
            age_offset: 401,
            seed: 7,
            photo_width: 800,
            photo_height: 600,
        }
    }
}

/// What [`generate`] wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub questions: PathBuf,
    pub items: usize,
    pub days: usize,
    pub question_count: usize,
    /// A date at which every page is `age_offset` to `age_offset + days - 1` days old.
    pub now: NaiveDate,
    pub options: SynthOptions,
}

/// Per-day names, all distinct across days for up to 64 days.
#[derive(Debug, Clone, PartialEq)]
pub struct DayNames {
    pub place: String,
    pub person: String,
    pub companion: String,
    pub city: String,
}

pub fn day_names(day: usize, order: &[usize]) -> DayNames {
    let i = order[day % order.len()];
    let lap = day / order.len();
    let cap = |w: &str| {
        let mut c = w.chars();
        c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
    };
    DayNames {
        place: format!("{} {}", cap(ADJECTIVES[i]), cap(NOUNS[(i + lap * 7) % NOUNS.len()])),
        person: format!("{} {}", FIRST_NAMES[i], SURNAMES[(i + lap * 5) % SURNAMES.len()]),
        companion: format!(
            "{} {}",
            FIRST_NAMES[(i + 32) % FIRST_NAMES.len()],
            SURNAMES[(i + 17 + lap * 3) % SURNAMES.len()]
        ),
        city: CITIES[(i + lap * 11) % CITIES.len()].to_string(),
    }
}

/// A photo-like raster: smooth gradient, a few soft shapes and sensor noise.
pub fn synthetic_photo(width: u32, height: u32, rng: &mut impl Rng) -> RgbImage {
    let base: [f32; 3] = [rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0)];
    let tilt: [f32; 3] = [rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)];
    let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..rng.gen_range(3..7))
        .map(|_| {
            (
                rng.gen_range(0.0..width as f32),
                rng.gen_range(0.0..height as f32),
                rng.gen_range(8.0..(width.min(height) as f32 / 2.5).max(9.0)),
                [rng.gen_range(-90.0..90.0), rng.gen_range(-90.0..90.0), rng.gen_range(-90.0..90.0)],
            )
        })
        .collect();
    let mut img = RgbImage::new(width, height);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (fx, fy) = (x as f32 / width as f32, y as f32 / height as f32);
        let mut c = [0u8; 3];
        for ch in 0..3 {
            let mut v = base[ch] + tilt[ch] * (fx - fy);
            for (bx, by, r, tint) in &blobs {
                let d2 = ((x as f32 - bx).powi(2) + (y as f32 - by).powi(2)) / (r * r);
                v += tint[ch] * (-d2).exp();
            }
            v += rng.gen_range(-12.0..12.0);
            c[ch] = v.clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(c);
    }
    img
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    id: &'a str,
    kind: &'a str,
    timestamp: String,
    payload: &'a str,
    meta: std::collections::BTreeMap<&'a str, String>,
}

/// Writes `manifest.jsonl`, `media/`, `questions.jsonl` and `synth.json` into `dir`.
pub fn generate(dir: &Path, opts: &SynthOptions) -> Result<SynthCorpus> {
    if opts.days == 0 {
        return Err(Error::Config("synthetic corpus needs at least one day".into()));
    }
    let media = dir.join("media");
    fs::create_dir_all(&media).map_err(|e| Error::io(format!("create {}", media.display()), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..ADJECTIVES.len()).collect();
    order.shuffle(&mut rng);

    let mut manifest = String::new();
    let mut questions = Vec::new();
    let mut items = 0;
    for day in 0..opts.days {
        let date = opts.start + Duration::days(day as i64);
        let names = day_names(day, &order);
        let at = |h: u32, m: u32| {
            Utc.from_utc_datetime(&date.and_hms_opt(h, m, 0).expect("valid time"))
                .format("%Y-%m-%dT%H:%M:%SZ")
                .to_string()
        };
        let lunch_cost = rng.gen_range(12..95);
        let ticket_cost = rng.gen_range(8..60);
        let distance = rng.gen_range(15..400);
        let lunch_id = format!("d{day:03}-lunch");
        let trip_id = format!("d{day:03}-trip");
        let photo_id = format!("d{day:03}-photo");

        let lunch = format!(
            "Lunch with {} at {}, paid {lunch_cost} EUR for two courses.",
            names.person, names.place
        );
        let trip = format!(
            "Train to {} with {}, ticket {ticket_cost} GBP, {distance} km each way.",
            names.city, names.companion
        );
        let photo_rel = format!("media/{photo_id}.jpg");
        let photo = synthetic_photo(opts.photo_width, opts.photo_height, &mut rng);
        let photo_bytes = crate::pagebuilder::encode_jpeg(&photo, 90)?;
        crate::util::write_atomic(&dir.join(&photo_rel), &photo_bytes)?;
        let caption = format!(
            "a {} {} on the table",
            COLORS[rng.gen_range(0..COLORS.len())],
            THINGS[rng.gen_range(0..THINGS.len())]
        );

        let lines = [
            ManifestLine {
                id: &lunch_id,
                kind: "text",
                timestamp: at(12, 30),
                payload: &lunch,
                meta: [("subject", format!("Lunch at {}", names.place))].into_iter().collect(),
            },
            ManifestLine {
                id: &photo_id,
                kind: "image",
                timestamp: at(13, 15),
                payload: &photo_rel,
                meta: [("caption", caption)].into_iter().collect(),
            },
            ManifestLine {
                id: &trip_id,
                kind: "text",
                timestamp: at(17, 45),
                payload: &trip,
                meta: [("subject", format!("Trip to {}", names.city))].into_iter().collect(),
            },
        ];
        for line in &lines {
            manifest.push_str(&serde_json::to_string(line)?);
            manifest.push('\n');
            items += 1;
        }

        let place = &names.place;
        let q = match day % 3 {
            0 => BenchmarkQuestion {
                qid: format!("q{day:03}"),
                question: format!("How much did I pay at {place}?"),
                qtype: QuestionType::Number,
                answer: format!("{lunch_cost} eur"),
                evidence: vec![lunch_id.clone()],
                asked_date: None,
            },
            1 => BenchmarkQuestion {
                qid: format!("q{day:03}"),
                question: format!("Who did I have lunch with at {place}?"),
                qtype: QuestionType::OpenEnd,
                answer: names.person.to_lowercase(),
                evidence: vec![lunch_id.clone()],
                asked_date: None,
            },
            _ => BenchmarkQuestion {
                qid: format!("q{day:03}"),
                question: format!("Which people did I see on the day I ate at {place}?"),
                qtype: QuestionType::ListRecall,
                answer: format!("{}, {}", names.person.to_lowercase(), names.companion.to_lowercase()),
                evidence: vec![lunch_id.clone(), trip_id.clone()],
                asked_date: None,
            },
        };
        questions.push(q);
    }

    let manifest_path = dir.join("manifest.jsonl");
    crate::util::write_atomic(&manifest_path, manifest.as_bytes())?;
    let questions_path = dir.join("questions.jsonl");
    write_questions(&questions_path, &questions)?;
    let last = opts.start + Duration::days(opts.days as i64 - 1);
    let out = SynthCorpus {
        dir: dir.to_path_buf(),
        manifest: manifest_path,
        questions: questions_path,
        items,
        days: opts.days,
        question_count: questions.len(),
        now: last + Duration::days(opts.age_offset),
        options: opts.clone(),
    };
    crate::util::write_atomic(&dir.join("synth.json"), &serde_json::to_vec_pretty(&out)?)?;
    Ok(out)
}
