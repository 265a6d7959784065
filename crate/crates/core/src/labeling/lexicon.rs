//! Verb lexicon and a rule-based lemmatizer.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

/// Base forms recognized as verbs.
const VERBS: &[&str] = &[
    "accept", "accompany", "accuse", "add", "admire", "admit", "advise", "agree", "allow", "amuse", "announce",
    "annoy", "answer", "apologize", "appear", "approach", "argue", "arrive", "ask", "attack", "avoid", "awake",
    "bark", "be", "bear", "beat", "beckon", "become", "beg", "begin", "believe", "bend", "bet", "bid", "bind",
    "bite", "blame", "bleed", "bless", "blink", "blow", "blush", "boast", "bother", "bow", "break", "breathe",
    "bring", "build", "burn", "burst", "buy", "call", "calm", "care", "carry", "catch", "chase", "chat", "cheer",
    "choose", "clap", "climb", "cling", "comfort", "come", "command", "complain", "confess", "consider",
    "console", "continue", "cost", "cough", "count", "cover", "crawl", "creep", "cry", "curse", "cut", "dance",
    "dare", "deal", "deceive", "decide", "defend", "deny", "describe", "deserve", "destroy", "die", "dig",
    "disappear", "discover", "dislike", "do", "doubt", "drag", "draw", "dream", "dress", "drink", "drive", "drop",
    "eat", "embrace", "encourage", "enjoy", "enter", "envy", "escape", "examine", "excuse", "expect", "explain",
    "face", "fall", "fear", "feed", "feel", "fetch", "fight", "fill", "find", "finish", "fly", "follow", "forbid",
    "forget", "forgive", "freeze", "frighten", "frown", "gasp", "gather", "gaze", "get", "give", "glance", "glare",
    "go", "grab", "greet", "grin", "grind", "grip", "groan", "grow", "growl", "grumble", "guess", "guide", "hand",
    "hang", "happen", "hate", "have", "hear", "help", "hesitate", "hide", "hit", "hold", "hope", "howl", "hug",
    "hurry", "hurt", "ignore", "imagine", "insist", "insult", "interrupt", "introduce", "invite", "join", "joke",
    "jump", "keep", "kick", "kill", "kiss", "kneel", "knock", "know", "laugh", "lay", "lead", "lean", "leap",
    "learn", "leave", "lend", "let", "lie", "lift", "like", "listen", "live", "look", "lose", "love", "make",
    "marry", "mean", "meet", "mention", "mind", "miss", "mock", "mumble", "murmur", "mutter", "need", "nod",
    "notice", "obey", "offer", "open", "order", "owe", "paint", "pass", "pat", "pause", "pay", "peer", "persuade",
    "pick", "pity", "plan", "play", "plead", "please", "point", "pour", "praise", "pray", "prefer", "prepare",
    "pretend", "promise", "protect", "prove", "pull", "punch", "punish", "push", "put", "question", "quit",
    "rage", "reach", "read", "realize", "recall", "receive", "recognize", "refuse", "remain", "remember",
    "remind", "repeat", "reply", "rescue", "respect", "rest", "return", "ride", "ring", "rise", "roar", "rub",
    "run", "rush", "save", "say", "scold", "scream", "search", "see", "seek", "seem", "seize", "sell", "send",
    "serve", "set", "shake", "share", "shine", "shiver", "shoot", "shout", "shove", "show", "shrug", "shudder",
    "shut", "sigh", "sidle", "sing", "sink", "sit", "slap", "sleep", "slide", "slip", "smell", "smile", "smirk",
    "snap", "snarl", "sneer", "sniff", "snort", "sob", "speak", "spend", "spin", "spit", "stand", "stare",
    "start", "stay", "steal", "step", "stick", "sting", "stop", "stride", "strike", "struggle", "study", "stumble",
    "suggest", "support", "suppose", "surprise", "swear", "sweep", "swim", "swing", "take", "talk", "teach",
    "tear", "tease", "tell", "thank", "think", "threaten", "throw", "touch", "trust", "try", "turn", "understand",
    "upset", "urge", "visit", "wait", "wake", "walk", "wander", "want", "warn", "watch", "wave", "wear", "weep",
    "welcome", "whisper", "win", "wink", "wish", "wonder", "worry", "wrap", "write", "yell",
];

/// Irregular inflections mapped to their base form. No base form appears as
/// a key.
const IRREGULAR: &[(&str, &str)] = &[
    ("am", "be"), ("is", "be"), ("are", "be"), ("was", "be"), ("were", "be"), ("been", "be"), ("being", "be"),
    ("has", "have"), ("had", "have"), ("having", "have"),
    ("does", "do"), ("did", "do"), ("done", "do"), ("doing", "do"),
    ("said", "say"), ("says", "say"), ("went", "go"), ("gone", "go"), ("goes", "go"),
    ("came", "come"), ("saw", "see"), ("seen", "see"), ("took", "take"), ("taken", "take"),
    ("gave", "give"), ("given", "give"), ("got", "get"), ("gotten", "get"), ("made", "make"),
    ("knew", "know"), ("known", "know"), ("thought", "think"), ("told", "tell"), ("found", "find"),
    ("felt", "feel"), ("left", "leave"), ("kept", "keep"), ("held", "hold"), ("stood", "stand"),
    ("understood", "understand"), ("heard", "hear"), ("met", "meet"), ("ran", "run"), ("sat", "sit"),
    ("spoke", "speak"), ("spoken", "speak"), ("brought", "bring"), ("bought", "buy"), ("caught", "catch"),
    ("taught", "teach"), ("fought", "fight"), ("sought", "seek"), ("threw", "throw"), ("thrown", "throw"),
    ("drew", "draw"), ("drawn", "draw"), ("grew", "grow"), ("grown", "grow"), ("blew", "blow"), ("flew", "fly"),
    ("wrote", "write"), ("written", "write"), ("rode", "ride"), ("ridden", "ride"), ("rose", "rise"),
    ("risen", "rise"), ("woke", "wake"), ("woken", "wake"), ("broke", "break"), ("broken", "break"),
    ("chose", "choose"), ("chosen", "choose"), ("froze", "freeze"), ("frozen", "freeze"), ("stole", "steal"),
    ("stolen", "steal"), ("swore", "swear"), ("sworn", "swear"), ("tore", "tear"), ("torn", "tear"),
    ("wore", "wear"), ("worn", "wear"), ("bore", "bear"), ("born", "bear"), ("began", "begin"),
    ("begun", "begin"), ("sang", "sing"), ("sung", "sing"), ("sank", "sink"), ("sunk", "sink"), ("swam", "swim"),
    ("swum", "swim"), ("rang", "ring"), ("rung", "ring"), ("drank", "drink"), ("drunk", "drink"),
    ("ate", "eat"), ("eaten", "eat"), ("fell", "fall"), ("fallen", "fall"), ("forgot", "forget"),
    ("forgotten", "forget"), ("forgave", "forgive"), ("forgiven", "forgive"), ("forbade", "forbid"),
    ("forbidden", "forbid"), ("became", "become"), ("bit", "bite"), ("bitten", "bite"), ("hid", "hide"),
    ("hidden", "hide"), ("shook", "shake"), ("shaken", "shake"), ("slept", "sleep"), ("swept", "sweep"),
    ("wept", "weep"), ("crept", "creep"), ("knelt", "kneel"), ("leapt", "leap"), ("lent", "lend"),
    ("sent", "send"), ("spent", "spend"), ("built", "build"), ("bent", "bend"), ("meant", "mean"),
    ("dealt", "deal"), ("led", "lead"), ("fed", "feed"), ("fled", "flee"), ("bled", "bleed"), ("lost", "lose"),
    ("paid", "pay"), ("laid", "lay"), ("lain", "lie"), ("sold", "sell"), ("shone", "shine"),
    ("shot", "shoot"), ("slid", "slide"), ("spun", "spin"), ("spat", "spit"), ("stuck", "stick"),
    ("stung", "sting"), ("strode", "stride"), ("struck", "strike"), ("swung", "swing"), ("clung", "cling"),
    ("hung", "hang"), ("won", "win"), ("dug", "dig"), ("drove", "drive"), ("driven", "drive"), ("awoke", "awake"),
    ("bound", "bind"), ("ground", "grind"), ("dreamt", "dream"), ("burnt", "burn"), ("learnt", "learn"),
    ("smelt", "smell"), ("dies", "die"), ("dying", "die"), ("lying", "lie"), ("lies", "lie"),
];

/// Auxiliary lemmas dropped from labels unless nothing else is left.
pub const AUXILIARIES: &[&str] = &["be", "have", "do"];

/// Words that may follow a verb as a particle or preposition.
pub const PARTICLES: &[&str] = &[
    "about", "across", "after", "against", "along", "around", "at", "away", "back", "behind", "by", "down", "for",
    "from", "in", "into", "off", "on", "onto", "out", "over", "past", "through", "to", "toward", "towards", "up",
    "upon", "with",
];

/// Words after which a lexicon word is read as a noun.
pub const DETERMINERS: &[&str] = &[
    "a", "an", "the", "his", "her", "their", "my", "your", "its", "our", "this", "that", "these", "those", "some",
    "no", "every", "each", "any",
];

struct Tables {
    verbs: HashSet<&'static str>,
    irregular: HashMap<&'static str, &'static str>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut verbs: HashSet<&'static str> = VERBS.iter().copied().collect();
        verbs.extend(IRREGULAR.iter().map(|(_, base)| *base));
        Tables { verbs, irregular: IRREGULAR.iter().copied().collect() }
    })
}

pub fn is_base_verb(word: &str) -> bool {
    tables().verbs.contains(word)
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn undouble(stem: &str) -> Option<&str> {
    let b = stem.as_bytes();
    let n = b.len();
    (n >= 3 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z' | b'f'))
        .then(|| &stem[..n - 1])
}

/// Strips `-ed`/`-ing` from a stem, choosing among the plain, `+e` and
/// undoubled readings.
fn restore(stem: &str) -> String {
    let with_e = format!("{stem}e");
    let candidates = [undouble(stem).map(str::to_owned), Some(with_e.clone()), Some(stem.to_owned())];
    if let Some(hit) = candidates.iter().flatten().find(|c| is_base_verb(c)) {
        return hit.clone();
    }
    if let Some(u) = undouble(stem) {
        return u.to_owned();
    }
    let b = stem.as_bytes();
    let n = b.len();
    // consonant + vowel + single consonant usually drops a silent e
    if n >= 3 && !is_vowel(b[n - 1]) && is_vowel(b[n - 2]) && !is_vowel(b[n - 3]) && !matches!(b[n - 1], b'w' | b'x' | b'y') {
        return with_e;
    }
    stem.to_owned()
}

fn suffix_rules(word: &str) -> String {
    if let Some(base) = tables().irregular.get(word) {
        return (*base).to_owned();
    }
    if is_base_verb(word) || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_owned();
    }
    let n = word.len();
    if n > 4 && (word.ends_with("ies") || word.ends_with("ied")) {
        return format!("{}y", &word[..n - 3]);
    }
    if n >= 5 && word.ends_with("ing") {
        return restore(&word[..n - 3]);
    }
    if n >= 4 && word.ends_with("ed") {
        return restore(&word[..n - 2]);
    }
    if n > 4 && ["ches", "shes", "sses", "xes", "zes"].iter().any(|s| word.ends_with(s)) {
        return word[..n - 2].to_owned();
    }
    if n > 3 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") {
        return word[..n - 1].to_owned();
    }
    word.to_owned()
}

/// Base form of a lowercase word.
///
/// Irregular table first, then suffix rules. A rule result that would itself
/// be rewritten again is discarded, which keeps the function idempotent.
pub fn lemmatize(word: &str) -> String {
    let lemma = suffix_rules(word);
    if lemma == word || suffix_rules(&lemma) == lemma {
        lemma
    } else {
        word.to_owned()
    }
}

/// Lexicon membership for the word or for its lemma when the word carries
/// an inflectional suffix or is an irregular form.
pub fn is_verb_form(word: &str) -> bool {
    if is_base_verb(word) || tables().irregular.contains_key(word) {
        return true;
    }
    let inflected = word.ends_with("ed") || word.ends_with("ing") || word.ends_with('s');
    inflected && is_base_verb(&lemmatize(word))
}
