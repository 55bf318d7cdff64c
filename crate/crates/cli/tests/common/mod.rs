#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causalread::corpus::{load_corpus, write_corpus, Corpus, CorpusFormat};

pub const MINI: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mini_csk.json");

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_causalread"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Runs and asserts exit 0, returning stdout.
pub fn run_ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} exited {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The bundled mini corpus widened to `n` stories by cloning with fresh ids.
pub fn widened(n: usize) -> Corpus {
    let mini = load_corpus(MINI, CorpusFormat::CskJson).unwrap();
    let stories = (0..n)
        .map(|i| {
            let mut st = mini.stories[i % mini.stories.len()].clone();
            st.story_id = format!("s{:02}", i + 1);
            st.topic = format!("{} {}", st.topic, i + 1);
            st
        })
        .collect();
    Corpus { name: format!("mini{n}"), stories, ..mini }
}

pub fn write_widened(dir: &Path, n: usize) -> PathBuf {
    let p = dir.join(format!("mini{n}.json"));
    write_corpus(&widened(n), &p).unwrap();
    p
}

/// (name, goal, tool, what the tool is used for). Region B is the whole
/// sentence "<name> used the <tool> to <use>.", so its length varies by story.
const SCRIPTS: [(&str, &str, &str, &str); 24] = [
    ("Tom", "plant tomatoes", "canes", "tie the young stems upright"),
    ("Priya", "fix her bike", "patches", "seal the small hole in the tube"),
    ("Omar", "bake bread", "yeast", "raise the dough"),
    ("Lena", "paint the fence", "brushes", "spread a coat of green along every board"),
    ("Ken", "hang a picture", "hammer", "drive in a nail"),
    ("Sara", "wrap a present", "ribbon", "tie a bow on top of the box"),
    ("Ivan", "make tea", "kettle", "boil some water"),
    ("Maya", "sew a button", "needle", "pull the thread through the fabric twice"),
    ("Luis", "wash the car", "sponge", "scrub the mud off the doors and the wheels"),
    ("Nora", "carve a pumpkin", "knife", "cut a grinning face"),
    ("Ben", "start a campfire", "matches", "light the dry kindling under the logs"),
    ("Aiko", "write a letter", "pen", "sign her name"),
    ("Paul", "mop the kitchen", "bucket", "carry warm soapy water across the floor"),
    ("Rosa", "iron a shirt", "iron", "press the creased collar and both sleeves flat"),
    ("Dev", "change a bulb", "ladder", "reach the ceiling"),
    ("Ella", "brush the dog", "comb", "work the knots out of its long coat"),
    ("Sam", "pack a lunch", "box", "hold two sandwiches and an apple"),
    ("Yuki", "fly a kite", "string", "let it climb"),
    ("Hugo", "tune a guitar", "tuner", "check each string one at a time until they rang true"),
    ("Ines", "frame a photo", "glue", "fix the print to the card"),
    ("Max", "shovel snow", "shovel", "clear a path to the gate"),
    ("Zoe", "dye a scarf", "gloves", "protect her hands"),
    ("Finn", "fill the pool", "hose", "run water in from the garden tap all afternoon"),
    ("Gwen", "make pancakes", "whisk", "beat the eggs into the flour and milk"),
];

fn directional_story(i: usize, swapped: bool) -> serde_json::Value {
    let (name, goal, tool, usage) = SCRIPTS[i];
    let b = format!("{name} used the {tool} to {usage}.");
    let (affirmed, negated) = (format!("{name} fetched the {tool}."), format!("{name} searched for the {tool} but it was gone."));
    let (affirmed, negated) = if swapped { (negated, affirmed) } else { (affirmed, negated) };
    serde_json::json!({
        "story_id": format!("d{:02}", i + 1),
        "topic": goal,
        "chunks": [
            {"role": "initiation", "text": format!("{name} wanted to {goal}.")},
            {"role": "intermediate", "text": format!("{name} cleared some space first.")},
            {"role": "intermediate", "text": "Everything else was ready."},
            {"role": "chunk_b", "text": b},
            {"role": "post_b", "text": "It all worked out in the end."}
        ],
        "chunk_a": {"affirmed": affirmed, "negated": negated, "position": 3},
        "region_b": {"chunk_index": 3, "start": 0, "end": b.chars().count()},
        "event_a_text": format!("fetch the {tool}"),
        "event_b_text": format!("use the {tool}"),
        "event_not_a_text": format!("no {tool}")
    })
}

/// Writes a corpus in which the affirmed A chunk ends on the tool word, which
/// the reference model has seen right before the region's first word, while
/// the negated chunk ends on a word it has never seen. `swap` flips the two A
/// chunks of each story where the closure says so. Returns (corpus, seed text).
pub fn write_directional(dir: &Path, tag: &str, swap: impl Fn(usize) -> bool) -> (PathBuf, PathBuf) {
    let stories: Vec<_> = (0..SCRIPTS.len()).map(|i| directional_story(i, swap(i))).collect();
    let corpus = serde_json::json!({"name": "directional", "source": "CSK", "stories": stories});
    let cpath = dir.join(format!("directional_{tag}.json"));
    std::fs::write(&cpath, serde_json::to_string_pretty(&corpus).unwrap()).unwrap();
    let seed: String = SCRIPTS
        .iter()
        .map(|(name, _, tool, usage)| format!("{name} fetched the {tool}. {name} used the {tool} to {usage}.\n"))
        .collect();
    let spath = dir.join("directional_seed.txt");
    std::fs::write(&spath, seed).unwrap();
    (cpath, spath)
}
