//! Deterministic generator for a benchmark-shaped demo corpus.
//!
//! Produces chunk-annotated voice-assistant queries in the same JSON layout
//! the loader reads (one file per intent, `{"data": [chunks]}` utterances):
//! seven in-domain intents for train/test splits, plus a larger reservoir of
//! unannotated-style intents. Everything is a pure function of the seed.
//!
//! The pattern space is deliberately combinatorial: every intent owns a set
//! of equally likely core templates with internal alternations, and each
//! drawn query may pick up an interjection prefix ("hey", "please", ...) and
//! a tail ("thanks", "right now", ...). A few hundred labelled draws
//! therefore cover only a small corner of each intent's surface forms, which
//! is what makes held-out rephrasings worth mining.
//!
//! The reservoir mirrors what a real log dump looks like, in three tiers:
//! - rephrasing intents that talk about an in-domain topic with the same
//!   content vocabulary but new carrier phrases (plus a couple of templates
//!   that drag one foreign content word in);
//! - blend intents mixing the content vocabulary of two in-domain topics in
//!   one sentence;
//! - unrelated intents with their own vocabulary.
//!
//! The corpus bundles word vectors (`embeddings.txt`) built so that cosine
//! similarity reflects topical overlap: all content tokens of one topic
//! share a base direction plus per-token noise, while function words get
//! short near-orthogonal vectors. Mean-pooled sentences of a rephrasing
//! intent then sit close to the matching in-domain centroid, blends land in
//! a middle band, and unrelated intents stay far away.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::corpus::{placeholder, tokenize, Dataset, SlotChunk, Utterance};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// Sizes and seed for one generated corpus.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub train_per_intent: usize,
    pub test_per_intent: usize,
    pub reservoir_per_intent: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_per_intent: 2000,
            test_per_intent: 100,
            reservoir_per_intent: 250,
            seed: 2024,
        }
    }
}

/// Which side of the corpus to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    InDomain,
    Reservoir,
}

/// File name of the word vectors bundled beside the three splits.
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
/// Dimension of the bundled word vectors.
pub const EMBEDDING_DIM: usize = 100;
/// Seed of the bundled word vectors.
pub const EMBEDDING_SEED: u64 = 5;

struct Grammar {
    intent: &'static str,
    /// Equally likely core templates.
    templates: &'static [&'static str],
}

/// Optional interjection openers. The pools are kept small and the empty
/// entry is only one option among a few, so at a sentence boundary no single
/// choice dominates the others by much.
const PREFIXES: &[&str] = &["", "", "hey ", "please ", "ok "];

/// Optional sentence tails, same convention as `PREFIXES`.
const SUFFIXES: &[&str] = &["", " please", " thanks"];

// In-domain templates are flat on purpose: every template is one fixed token
// sequence (plus slots), and templates within an intent differ from the
// first words on. A language model of the intent alone therefore faces high
// uncertainty exactly at the sentence boundaries, which is what pushes the
// trained generator to spread its latent codes over the template choices
// instead of collapsing onto a single modal sentence.
const WEATHER: &[&str] = &[
    "what is the weather in {city} this {timeframe}",
    "what's the weather like in {city} on {day}",
    "will it rain in {city} this {timeframe}",
    "is it going to snow near {city} tomorrow",
    "give me the forecast for {city} this {timeframe}",
    "how cold will it be in {city} tomorrow",
    "do i need an umbrella today in {city}",
    "what's the temperature in {city} at the moment",
    "is there a storm on the way this {timeframe}",
    "check the weather conditions for {city}",
    "tell me the weather report for {day}",
    "any rain coming to {city} this {timeframe}",
    "will it be sunny in {city} on {day}",
    "how windy is it in {city} today",
    "is it hot in {city} this {timeframe}",
];

const MUSIC: &[&str] = &[
    "play the song {track} by {artist}",
    "play some {genre} music",
    "i want to hear {track} by {artist}",
    "i would like to hear some {genre} songs",
    "put on the album {album} by {artist}",
    "play the album {album}",
    "i feel like hearing some {genre} music",
    "play something by {artist}",
    "let me hear {track} one more time",
    "play us some good music",
    "put on some {genre} music",
    "play songs from the album {album}",
    "i want to hear music by {artist}",
    "start the song {track} by {artist}",
    "let me hear the album {album} again",
];

const PLAYLIST: &[&str] = &[
    "add {track} to my {playlist} playlist",
    "add this track to {playlist}",
    "put {track} onto my {playlist} playlist",
    "save {track} to the {playlist} queue",
    "add some {genre} tracks to {playlist}",
    "queue up {track} by {artist}",
    "add {artist} to my {playlist} playlist",
    "update the playlist {playlist} with {track}",
    "put this track into {playlist}",
    "add the new {artist} track to my {playlist} playlist",
    "save this track to my {playlist} playlist",
    "add {track} by {artist} to the queue",
    "queue {track} next",
    "save {track} to {playlist}",
    "add a {genre} track to the {playlist} playlist",
];

const RESTAURANT: &[&str] = &[
    "book a table for {party_size} at {restaurant}",
    "reserve a table at {restaurant} for {meal}",
    "book {restaurant} for {meal} tonight",
    "i need a reservation at {restaurant}",
    "make a reservation for {party_size} people on {day}",
    "find me a {cuisine} restaurant in {city}",
    "book a {cuisine} place for {meal}",
    "get us a table at {restaurant} on {day}",
    "i'd like to eat at {restaurant} for {meal}",
    "reserve {restaurant} for {party_size} guests",
    "we want a table for {meal} on {day}",
    "a table for {party_size} at {restaurant}",
    "reserve a spot at {restaurant} for {party_size}",
    "i want a reservation for {meal} in {city}",
    "book a table for {party_size} people for {meal}",
];

const RATEBOOK: &[&str] = &[
    "rate {book} {rating} stars",
    "give {book} a rating of {rating}",
    "rate the novel {book} {rating} stars",
    "i rate {book} {rating} out of {scale}",
    "give the novel {book} {rating} stars",
    "mark {book} as {rating} of {scale}",
    "add a {rating} star review for {book}",
    "review {book} with {rating} points",
    "this book deserves {rating} stars",
    "score {book} {rating} of {scale}",
    "rate my current book {rating} stars",
    "give this series a rating of {rating}",
    "rate the book {book} {rating} out of {scale}",
    "this novel gets {rating} stars from me",
    "give {book} {rating} points",
];

const CREATIVE: &[&str] = &[
    "find the {work_type} called {work}",
    "search for the {work_type} {work}",
    "i want to watch {work}",
    "look up the {work_type} {work}",
    "show me the {work_type} called {work}",
    "find {work} to watch",
    "search the catalog for {work}",
    "search for something titled {work}",
    "where can i watch {work}",
    "pull up the {work_type} {work}",
    "i'm looking for the {work_type} {work}",
    "find a {work_type} by {artist}",
    "i would like to read {work}",
    "look for the {work_type} titled {work}",
    "find something called {work}",
];

const SCREENING: &[&str] = &[
    "what movies are playing at {cinema}",
    "showtimes for {work} at {cinema}",
    "is {work} playing at {cinema} today",
    "find movie times in {city}",
    "get me tickets for {work} on {day}",
    "when is {work} showing at {cinema}",
    "movie schedule for {cinema}",
    "i want to see {work} at {cinema}",
    "are there seats for {work} on {day}",
    "what's playing at {cinema} tonight",
    "book movie tickets for {work}",
    "which theater is showing {work} on {day}",
    "any showings of {work} near me",
    "movie times at {cinema} for {day}",
    "get us tickets to the movies on {day}",
];

// Reservoir tier 1: rephrasings. Same content vocabulary as the in-domain
// counterpart, with two deliberate regularities. Most templates open with
// the same few words as one of the counterpart's templates before diverging.
// And the first six templates of each set are built from interchangeable
// opening, middle, and tail segments, each opening paired with two different
// middles and each middle with two different tails, so the segments compose
// beyond the listed combinations. The last two templates of each set drag
// exactly one foreign content word in.
const WEATHER_TWIN: &[&str] = &[
    "what's the weather like out on the coast this {timeframe}",
    "what's the weather like up in the hills when the storm comes",
    "give me the forecast up in the hills if it stays cold",
    "give me the forecast near {city} this {timeframe}",
    "will it rain or snow near {city} when the storm comes",
    "will it rain or snow out on the coast if it stays cold",
    "any snow expected in {city} this {timeframe}",
    "how cold does {city} get this {timeframe}",
    "weather forecast for rain near {restaurant} this {timeframe}",
    "cold weather forecast before the movie this {timeframe}",
];

const MUSIC_TWIN: &[&str] = &[
    "play me a song from the album {album} one more time",
    "play me a song with good songs on it for the drive home",
    "i want to hear music with good songs on it before bed tonight",
    "i want to hear music from the album {album} for the drive home",
    "put on the album {album} by my favorite {artist} one more time",
    "put on the album {album} by my favorite {artist} before bed tonight",
    "let me hear songs by {artist} this evening",
    "start the album {album} from the song {track}",
    "hear movie songs and music from the album {album}",
    "hear songs and music from the album at {restaurant}",
];

const PLAYLIST_TWIN: &[&str] = &[
    "add {track} to the {playlist} playlist right after this one",
    "add {track} next to the new tracks before i forget",
    "save this track next to the new tracks for the gym tomorrow",
    "save this track in my {playlist} queue right after this one",
    "queue up {track} in my {playlist} queue before i forget",
    "queue up {track} to the {playlist} playlist for the gym tomorrow",
    "update the playlist {playlist} and save this track",
    "queue {track} next in the {playlist} playlist",
    "add the movie theme to the {playlist} playlist queue",
    "save rain day tracks to the {playlist} queue",
];

const RESTAURANT_TWIN: &[&str] = &[
    "book a table for {party_size} people by the window",
    "book a table for {meal} out on the patio",
    "i need a reservation at {restaurant} sometime on {day}",
    "i need a reservation for {party_size} people out on the patio",
    "get us a table at {restaurant} by the window",
    "get us a table for {meal} sometime on {day}",
    "make a reservation for us at {restaurant} tonight",
    "a table for the {party_size} of us at {restaurant}",
    "reserve a {meal} table at {restaurant} near the {cinema}",
    "reserve a {meal} table at {restaurant} with music",
];

const RATEBOOK_TWIN: &[&str] = &[
    "rate {book} a solid {rating} stars without a doubt",
    "rate {book} {rating} out of {scale} from me",
    "give {book} a full {rating} points from me",
    "give {book} a solid {rating} stars this time around",
    "score {book} {rating} out of {scale} without a doubt",
    "score {book} a full {rating} points this time around",
    "this novel deserves all {rating} stars",
    "my rating for {book} is {rating} stars",
    "rate the novel behind the movie {rating} stars",
    "rate the {restaurant} cookbook {rating} stars out of {scale}",
];

const CREATIVE_TWIN: &[&str] = &[
    "search for the {work_type} called {work} for later tonight",
    "search for something to watch in the catalog",
    "look up the {work_type} titled {work} when i get home",
    "look up the {work_type} called {work} in the catalog",
    "pull up something to watch when i get home",
    "pull up the {work_type} titled {work} for later tonight",
    "where can i read the {work_type} {work}",
    "i'm looking for a {work_type} to watch",
    "search the catalog for the movie {work_type} called {work}",
    "search the catalog and watch the {work_type} with songs",
];

const SCREENING_TWIN: &[&str] = &[
    "get me tickets for the {day} showing of {work} this evening",
    "get me tickets for the movie {work} up front",
    "are there seats at the {cinema} theater up front",
    "are there seats for the {day} showing of {work} on the big screen",
    "i want to see the movie {work} on the big screen",
    "i want to see the show at the {cinema} theater this evening",
    "what movies are showing near me tonight",
    "when do the movies start at {cinema}",
    "theater showtimes and movie tickets near {restaurant}",
    "theater tickets and movie showtimes for a cold evening",
];

// Reservoir tier 2: blends. Each sentence mixes the content vocabulary of
// two in-domain topics, so it sits between their centroids.
const DINNER_MUSIC: &[&str] = &[
    "hear some {genre} music at the restaurant",
    "music and songs for my {meal}",
    "play dinner music at {restaurant} (|tonight)",
    "a song for our table at {restaurant}",
    "hear {genre} songs at the {cuisine} restaurant",
    "music to eat {meal} to",
    "songs for the {meal} reservation",
    "restaurant music for {meal} time",
];

const CINEMA_DINNER: &[&str] = &[
    "a table near the {cinema} for {meal}",
    "eat at {restaurant} before the movie",
    "reserve seats and a table for the movie",
    "book a {cuisine} restaurant near the theater",
    "dinner reservation after the {day} showing",
    "a table for {party_size} near the {cinema}",
    "eat {meal} before the movie starts",
    "reserve a table for the movie night",
];

const NOVEL_FILM: &[&str] = &[
    "did the novel {book} beat the movie",
    "rate the movie of the novel {book}",
    "is the movie as good as the novel",
    "stars for the movie version of {book}",
    "the novel {book} versus the movie",
    "review the movie made from {book}",
    "rating the movie against the novel {book}",
    "score the movie version of the novel",
];

const RAINY_PLAYLIST: &[&str] = &[
    "add rain sounds to {playlist}",
    "a playlist for the rain (today|this {timeframe})",
    "save storm sounds to my {playlist} playlist",
    "add {track} to the rain day queue",
    "queue tracks for the cold weather",
    "update my {playlist} playlist for the snow",
    "rain day playlist for this {timeframe}",
    "a {playlist} playlist for umbrella weather",
];

// Reservoir tier 3: unrelated intents with their own vocabulary.
const RADIO: &[&str] = &[
    "turn on the radio (|for us)",
    "put {station} on the radio",
    "tune (in|) to {station} (|fm)",
    "switch the station to {station}",
    "play {station} on the fm radio",
    "put on the {station} station",
    "tune the radio to {station}",
    "change the radio station to {station}",
];

const PODCAST: &[&str] = &[
    "play the (latest|newest) episode of {podcast}",
    "listen to the podcast {podcast}",
    "stream {podcast} (|for us)",
    "put on an episode of {podcast}",
    "start the {podcast} podcast",
    "listen to {podcast} from the (top|start)",
    "stream the (latest|) episode of {podcast}",
    "catch up on the podcast {podcast}",
];

const TIMER: &[&str] = &[
    "set a timer for {number} minutes",
    "start a {number} minute countdown",
    "timer for {number} minutes (|thanks)",
    "count down from {number} minutes",
    "give me a {number} minute timer",
    "set the kitchen timer for {number} minutes",
    "restart the timer for {number} minutes",
    "cancel the timer and set {number} minutes",
];

const ALARM: &[&str] = &[
    "set an alarm for {clock_time}",
    "wake me (up|) at {clock_time}",
    "alarm at {clock_time} (tomorrow|on {day})",
    "set a wake up alarm for {clock_time}",
    "snooze the alarm until {clock_time}",
    "i need an alarm at {clock_time}",
    "wake the house at {clock_time}",
    "morning alarm for {clock_time} (|tomorrow)",
];

const LIGHTS: &[&str] = &[
    "turn (on|off) the lights in the {room}",
    "dim the lights (in the {room}|a little)",
    "set the {room} lamp brightness low",
    "switch (on|off) the {room} lamp",
    "lights (on|off) in the {room}",
    "turn the {room} lights (up|down)",
    "set the lamp brightness in the {room}",
    "kill the lights in the {room}",
];

const FOOD_ORDER: &[&str] = &[
    "order (a|some|) {dish} for delivery",
    "i'm hungry order some {dish}",
    "get {dish} delivered (to my place|here|)",
    "order the usual takeout {dish}",
    "have some {dish} delivered (tonight|now)",
    "delivery order of {dish} (|thanks)",
    "put in an order for {dish}",
    "order {dish} takeout for two",
];

const MESSAGE: &[&str] = &[
    "send a (message|text) to {contact}",
    "text {contact} (that i'm on my way|hello|back)",
    "message {contact} (right away|now|)",
    "send {contact} a quick (message|text|note)",
    "reply to {contact} (|right away)",
    "ping {contact} (about tonight|for us|)",
    "shoot a text over to {contact}",
    "draft a message to {contact}",
];

const IN_DOMAIN: &[Grammar] = &[
    Grammar { intent: "AddToPlaylist", templates: PLAYLIST },
    Grammar { intent: "BookRestaurant", templates: RESTAURANT },
    Grammar { intent: "GetWeather", templates: WEATHER },
    Grammar { intent: "PlayMusic", templates: MUSIC },
    Grammar { intent: "RateBook", templates: RATEBOOK },
    Grammar { intent: "SearchCreativeWork", templates: CREATIVE },
    Grammar { intent: "SearchScreeningEvent", templates: SCREENING },
];

const RESERVOIR: &[Grammar] = &[
    // Rephrasings of the in-domain topics.
    Grammar { intent: "PlaylistUpdate", templates: PLAYLIST_TWIN },
    Grammar { intent: "TableBooking", templates: RESTAURANT_TWIN },
    Grammar { intent: "WeatherInquiry", templates: WEATHER_TWIN },
    Grammar { intent: "MusicRequest", templates: MUSIC_TWIN },
    Grammar { intent: "BookReview", templates: RATEBOOK_TWIN },
    Grammar { intent: "MediaSearch", templates: CREATIVE_TWIN },
    Grammar { intent: "ShowtimeQuery", templates: SCREENING_TWIN },
    // Two-topic blends.
    Grammar { intent: "DinnerMusic", templates: DINNER_MUSIC },
    Grammar { intent: "CinemaDinner", templates: CINEMA_DINNER },
    Grammar { intent: "NovelFilm", templates: NOVEL_FILM },
    Grammar { intent: "RainyPlaylist", templates: RAINY_PLAYLIST },
    // Unrelated.
    Grammar { intent: "PlayRadio", templates: RADIO },
    Grammar { intent: "PodcastPlay", templates: PODCAST },
    Grammar { intent: "SetTimer", templates: TIMER },
    Grammar { intent: "SetAlarm", templates: ALARM },
    Grammar { intent: "SmartHomeLight", templates: LIGHTS },
    Grammar { intent: "OrderFood", templates: FOOD_ORDER },
    Grammar { intent: "SendMessage", templates: MESSAGE },
];

const VALUES: &[(&str, &[&str])] = &[
    ("city", &[
        "paris", "london", "oslo", "madrid", "berlin", "rome", "vienna", "prague",
        "lisbon", "dublin", "athens", "warsaw", "budapest", "helsinki", "stockholm",
        "copenhagen", "amsterdam", "brussels", "zurich", "geneva", "munich", "hamburg",
        "barcelona", "valencia", "porto", "florence", "naples", "seattle", "portland",
        "denver", "austin", "boston", "chicago", "toronto", "montreal", "havana",
    ]),
    ("timeframe", &["week", "weekend", "evening", "morning", "afternoon", "month"]),
    ("day", &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]),
    ("artist", &[
        "nora vane", "the tin owls", "marlow reed", "ivy lenox", "cedar delgado",
        "june frost", "the paper suns", "felix marsh", "ada quill", "ruby tran",
        "the velvet foxes", "omar wilde", "stella north", "leo canter", "mira holt",
        "the glass pines", "quinn abbey", "dante cole", "willa mercer", "the night ferns",
        "rosa lune", "eli vance", "petra sol", "the copper larks",
    ]),
    ("track", &[
        "midnight garden", "silver lining", "paper planes home", "cold water",
        "golden hour", "static bloom", "northern line", "violet sky", "echo chamber",
        "slow burn", "wild honey", "sea glass", "neon river", "last orchard",
        "hollow moon", "sugar pine", "long december road", "quiet engine",
        "cherry soda", "gravel and gold", "low tide", "ember days", "satellite heart",
        "maple drive", "winter kept us", "blue arcade", "iron meadow", "small hours",
    ]),
    ("album", &[
        "field notes", "the slow parade", "arcadia", "houseplants", "tidal",
        "the commute tapes", "meridian", "souvenirs", "half light", "the atlas years",
        "come up for air", "night swimming", "the orchard sessions", "glasswork",
        "polar gardens", "afterglow",
    ]),
    ("genre", &[
        "jazz", "blues", "indie rock", "folk", "techno", "house", "classical",
        "ambient", "hip hop", "soul", "funk", "country", "reggae", "bossa nova",
    ]),
    ("playlist", &[
        "road trip", "morning coffee", "deep focus", "gym hits", "sunday chill",
        "party starters", "rainy day", "study beats", "throwback", "summer haze",
        "late night drive", "acoustic corner", "feel good", "workout fuel",
        "dinner party", "fresh finds",
    ]),
    ("cuisine", &[
        "italian", "mexican", "thai", "japanese", "indian", "french", "greek",
        "korean", "vietnamese", "spanish", "turkish", "lebanese", "ethiopian", "peruvian",
    ]),
    ("restaurant", &[
        "the wild rose", "blue lantern", "casa verde", "the brass fork",
        "lucky dumpling", "old harbor grill", "the garden gate", "smoke and oak",
        "little juniper", "the copper pot", "bayside kitchen", "the velvet spoon",
    ]),
    ("meal", &["breakfast", "lunch", "dinner", "brunch"]),
    ("party_size", &["two", "three", "four", "five", "six", "seven", "eight", "ten"]),
    ("book", &[
        "the glass harbor", "winter's ledger", "a field of static", "the last cartographer",
        "salt and cedar", "the orchard letters", "midnight at the archive", "the tin compass",
        "river of names", "the quiet taxidermist", "a map of small things", "the borrowed sky",
        "lanterns over aker", "the eighth tide", "notes from the attic", "the velvet almanac",
        "a history of doors", "the pale orchard", "sleepwalker's atlas", "the iron sparrow",
        "letters to a lighthouse", "the hollow calendar",
    ]),
    ("rating", &["zero", "one", "two", "three", "four", "five"]),
    ("scale", &["five", "six", "ten"]),
    ("work", &[
        "the salt road", "paper lions", "a winter abroad", "the last ferry",
        "garden of wires", "the blue hour", "night market", "the cartographer's son",
        "silent harvest", "the glass orchard", "low country", "the ember season",
        "a city of cranes", "the tide keeper", "hollow crown road", "the lantern thief",
        "small gods of maple street", "the winter circuit", "harbor lights",
        "the paper aviary", "north of nowhere", "the velvet divide", "a season of storms",
        "the clockmaker's daughter", "edge of the pines", "the silver meridian",
    ]),
    ("work_type", &[
        "movie", "film", "book", "novel", "album", "show", "series", "documentary",
    ]),
    ("cinema", &[
        "grand palace cinema", "the oak street theatre", "rivoli picture house",
        "starlight drive in", "the majestic", "orion multiplex", "harbor view cinema",
        "the bijou", "crescent screens", "palladium picture hall", "the roxy",
        "lumen cinema city",
    ]),
    ("station", &[
        "kexp", "jazz 88", "the breeze", "radio nova", "classic fm", "the mountain",
        "groove city radio", "night owl fm", "the current", "coastal waves",
        "retro gold", "campus radio",
    ]),
    ("podcast", &[
        "hidden maps", "the long form", "kitchen tapes", "slow news day",
        "the archive hour", "night signals", "field recordings", "the paper trail",
        "half remembered", "the commute", "dead languages", "signal and noise",
    ]),
    ("number", &["five", "ten", "fifteen", "twenty", "thirty", "forty five", "sixty", "ninety"]),
    ("clock_time", &["six am", "seven am", "eight am", "noon", "three pm", "six pm", "nine pm", "midnight"]),
    ("room", &["kitchen", "bedroom", "living room", "office", "hallway", "garage", "bathroom", "basement"]),
    ("dish", &[
        "pad thai", "lasagna", "tacos", "ramen", "pancakes", "butter chicken",
        "paella", "pho", "banana bread", "risotto", "dumplings", "falafel",
        "carbonara", "chili", "sourdough", "moussaka",
    ]),
    ("contact", &[
        "mom", "dad", "alex", "sam", "jordan", "the landlord", "my sister",
        "my brother", "grandma", "the plumber", "coach", "dr harper",
    ]),
];

fn value_list(slot: &str) -> Result<&'static [&'static str]> {
    VALUES
        .iter()
        .find(|(name, _)| *name == slot)
        .map(|(_, vals)| *vals)
        .ok_or_else(|| Error::Dataset(format!("template references unknown slot {slot:?}")))
}

/// Names of the seven train/test intents.
pub fn in_domain_intents() -> Vec<&'static str> {
    IN_DOMAIN.iter().map(|g| g.intent).collect()
}

/// Names of the reservoir intents.
pub fn reservoir_intents() -> Vec<&'static str> {
    RESERVOIR.iter().map(|g| g.intent).collect()
}

enum Seg {
    Lit(String),
    Alt(Vec<String>),
    Slot(String),
}

fn parse_template(template: &str) -> Result<Vec<Seg>> {
    let mut segs = Vec::new();
    let mut rest = template;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix('(') {
            let end = after.find(')').ok_or_else(|| {
                Error::Dataset(format!("unclosed group in template {template:?}"))
            })?;
            let body = &after[..end];
            if body.contains('(') {
                return Err(Error::Dataset(format!(
                    "nested group in template {template:?}"
                )));
            }
            segs.push(Seg::Alt(body.split('|').map(str::to_owned).collect()));
            rest = &after[end + 1..];
        } else if let Some(after) = rest.strip_prefix('{') {
            let end = after.find('}').ok_or_else(|| {
                Error::Dataset(format!("unclosed slot in template {template:?}"))
            })?;
            segs.push(Seg::Slot(after[..end].to_owned()));
            rest = &after[end + 1..];
        } else {
            let end = rest
                .find(['(', '{'])
                .unwrap_or(rest.len());
            segs.push(Seg::Lit(rest[..end].to_owned()));
            rest = &rest[end..];
        }
    }
    Ok(segs)
}

enum Piece {
    Text(String),
    Slot(String, String),
}

fn expand_text(text: &str, rng: &mut ChaCha8Rng, pieces: &mut Vec<Piece>) -> Result<()> {
    // Variants may carry {slot} references; no nested groups by construction.
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix('{') {
            let end = after
                .find('}')
                .ok_or_else(|| Error::Dataset(format!("unclosed slot in variant {text:?}")))?;
            let slot = &after[..end];
            let values = value_list(slot)?;
            let value = values[rng.random_range(0..values.len())];
            pieces.push(Piece::Slot(slot.to_owned(), value.to_owned()));
            rest = &after[end + 1..];
        } else {
            let end = rest.find('{').unwrap_or(rest.len());
            pieces.push(Piece::Text(rest[..end].to_owned()));
            rest = &rest[end..];
        }
    }
    Ok(())
}

fn expand_template(template: &str, rng: &mut ChaCha8Rng) -> Result<Vec<SlotChunk>> {
    let mut pieces = Vec::new();
    for seg in parse_template(template)? {
        match seg {
            Seg::Lit(text) => pieces.push(Piece::Text(text)),
            Seg::Alt(variants) => {
                let pick = variants[rng.random_range(0..variants.len())].clone();
                expand_text(&pick, rng, &mut pieces)?;
            }
            Seg::Slot(slot) => {
                let values = value_list(&slot)?;
                let value = values[rng.random_range(0..values.len())];
                pieces.push(Piece::Slot(slot, value.to_owned()));
            }
        }
    }
    // Merge adjacent text pieces into chunks.
    let mut chunks: Vec<SlotChunk> = Vec::new();
    let mut pending = String::new();
    for piece in pieces {
        match piece {
            Piece::Text(t) => pending.push_str(&t),
            Piece::Slot(slot, value) => {
                if !pending.is_empty() {
                    chunks.push(SlotChunk::plain(std::mem::take(&mut pending)));
                }
                chunks.push(SlotChunk::slotted(value, slot));
            }
        }
    }
    if !pending.is_empty() {
        chunks.push(SlotChunk::plain(pending));
    }
    Ok(chunks)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn generate_intent(grammar: &Grammar, n: usize, seed: u64, wrappers: bool) -> Result<Vec<Utterance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(grammar.intent.as_bytes()));
    (0..n)
        .map(|_| {
            let template = grammar.templates[rng.random_range(0..grammar.templates.len())];
            let full = if wrappers {
                let prefix = PREFIXES[rng.random_range(0..PREFIXES.len())];
                let suffix = SUFFIXES[rng.random_range(0..SUFFIXES.len())];
                format!("{prefix}{template}{suffix}")
            } else {
                template.to_owned()
            };
            Ok(Utterance {
                chunks: expand_template(&full, &mut rng)?,
                intent: grammar.intent.to_owned(),
            })
        })
        .collect()
}

/// Generates `per_intent` utterances for every intent of the split.
pub fn generate_split(kind: SplitKind, per_intent: usize, seed: u64) -> Result<Dataset> {
    let (grammars, wrappers) = match kind {
        SplitKind::InDomain => (IN_DOMAIN, true),
        SplitKind::Reservoir => (RESERVOIR, true),
    };
    let mut utterances = Vec::with_capacity(grammars.len() * per_intent);
    for grammar in grammars {
        utterances.extend(generate_intent(grammar, per_intent, seed, wrappers)?);
    }
    Dataset::from_utterances(utterances)
}

// ---- bundled word vectors ----

/// Topic clusters for the word vectors. Each entry lists the template sets
/// whose tokens belong to that topic; a token claimed by two different
/// topics is treated as a function word.
const CLUSTER_SOURCES: &[&[&str]] = &[
    WEATHER, MUSIC, PLAYLIST, RESTAURANT, RATEBOOK, CREATIVE, SCREENING,
    RADIO, PODCAST, TIMER, ALARM, LIGHTS, FOOD_ORDER, MESSAGE,
];

/// Words that never mark a topic, however rarely they occur.
const FUNCTION_WORDS: &[&str] = &[
    "hey", "ok", "okay", "please", "um", "alright", "thanks", "right", "now",
    "today", "tomorrow", "tonight", "us", "me", "you", "i", "i'd", "i'm", "we",
    "my", "our", "your", "a", "an", "the", "to", "of", "in", "on", "at", "and",
    "or", "for", "with", "by", "from", "near", "nearby", "some", "any", "all",
    "this", "that", "these", "what", "what's", "when", "where", "which", "who",
    "how", "will", "would", "can", "could", "should", "do", "does", "did",
    "is", "are", "was", "be", "it", "its", "it's", "need", "want", "like",
    "get", "give", "make", "set", "put", "turn", "find", "show", "tell",
    "check", "start", "stop", "go", "up", "down", "off", "out", "into", "onto",
    "about", "before", "after", "while", "between", "something", "anything",
    "one", "more", "time", "again",
];

/// Norm of the per-token noise added onto a topic's base direction.
const CLUSTER_NOISE: f64 = 0.45;
/// Norm of a function word's vector (topic bases are unit length).
const NEUTRAL_SCALE: f64 = 0.25;

/// Collects every surface token a template can produce, slots as their
/// pattern placeholder.
fn template_tokens(template: &str, out: &mut BTreeSet<String>) -> Result<()> {
    fn text_tokens(text: &str, out: &mut BTreeSet<String>) -> Result<()> {
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let end = rest[open..]
                .find('}')
                .map(|e| e + open)
                .ok_or_else(|| Error::Dataset(format!("unclosed slot in {text:?}")))?;
            out.extend(tokenize(&rest[..open]));
            out.insert(placeholder(&rest[open + 1..end]));
            rest = &rest[end + 1..];
        }
        out.extend(tokenize(rest));
        Ok(())
    }
    for seg in parse_template(template)? {
        match seg {
            Seg::Lit(text) => out.extend(tokenize(&text)),
            Seg::Slot(slot) => {
                out.insert(placeholder(&slot));
            }
            Seg::Alt(variants) => {
                for v in &variants {
                    text_tokens(v, out)?;
                }
            }
        }
    }
    Ok(())
}

/// Maps every token the corpus can produce to its topic cluster index, or
/// `None` for function words and tokens shared between topics.
fn token_clusters() -> Result<BTreeMap<String, Option<usize>>> {
    let mut map: BTreeMap<String, Option<usize>> = BTreeMap::new();
    for (ci, templates) in CLUSTER_SOURCES.iter().enumerate() {
        let mut tokens = BTreeSet::new();
        for template in *templates {
            template_tokens(template, &mut tokens)?;
        }
        for token in tokens {
            match map.entry(token) {
                Entry::Vacant(e) => {
                    e.insert(Some(ci));
                }
                Entry::Occupied(mut e) => {
                    if *e.get() != Some(ci) {
                        e.insert(None);
                    }
                }
            }
        }
    }
    // Rephrasing and blend grammars only borrow vocabulary; anything new in
    // them is a carrier word.
    for grammar in RESERVOIR {
        let mut tokens = BTreeSet::new();
        for template in grammar.templates {
            template_tokens(template, &mut tokens)?;
        }
        for token in tokens {
            map.entry(token).or_insert(None);
        }
    }
    for text in PREFIXES.iter().chain(SUFFIXES) {
        for token in tokenize(text) {
            map.insert(token, None);
        }
    }
    for word in FUNCTION_WORDS {
        map.insert((*word).to_owned(), None);
    }
    Ok(map)
}

fn unit_gauss(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// One orthonormal base direction per topic cluster (falls back to plain
/// unit vectors once the dimension is exhausted).
fn cluster_bases(dim: usize, seed: u64, k: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(b"topic-basis"));
    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v = unit_gauss(&mut rng, dim);
        for b in &bases {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
        } else {
            v = unit_gauss(&mut rng, dim);
        }
        bases.push(v);
    }
    bases
}

fn token_vectors(dim: usize, seed: u64) -> Result<BTreeMap<String, Vec<f64>>> {
    let clusters = token_clusters()?;
    let bases = cluster_bases(dim, seed, CLUSTER_SOURCES.len());
    let mut vectors = BTreeMap::new();
    for (token, cluster) in clusters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(token.as_bytes()));
        let noise = unit_gauss(&mut rng, dim);
        let v = match cluster {
            Some(ci) => bases[ci]
                .iter()
                .zip(&noise)
                .map(|(b, n)| b + CLUSTER_NOISE * n)
                .collect(),
            None => noise.into_iter().map(|n| NEUTRAL_SCALE * n).collect(),
        };
        vectors.insert(token, v);
    }
    Ok(vectors)
}

/// Word vectors covering the whole corpus vocabulary, clustered by topic as
/// described in the module docs.
pub fn embedding_table(dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let vectors: HashMap<String, Vec<f64>> = token_vectors(dim, seed)?.into_iter().collect();
    Ok(EmbeddingTable::from_vectors(dim, seed, vectors))
}

/// Writes the bundled word vectors in the plain `token v1 .. vdim` format.
pub fn write_embeddings(path: &Path, dim: usize, seed: u64) -> Result<()> {
    let mut out = String::new();
    for (token, v) in token_vectors(dim, seed)? {
        out.push_str(&token);
        for x in v {
            out.push(' ');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ChunkOut<'a> {
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    entity: Option<&'a str>,
}

#[derive(Serialize)]
struct UtteranceOut<'a> {
    data: Vec<ChunkOut<'a>>,
}

fn write_split(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut by_intent: BTreeMap<&str, Vec<UtteranceOut>> = BTreeMap::new();
    for utt in &dataset.utterances {
        by_intent
            .entry(utt.intent.as_str())
            .or_default()
            .push(UtteranceOut {
                data: utt
                    .chunks
                    .iter()
                    .map(|c| ChunkOut {
                        text: &c.text,
                        entity: c.slot.as_deref(),
                    })
                    .collect(),
            });
    }
    for (intent, utts) in by_intent {
        let mut file: BTreeMap<&str, Vec<UtteranceOut>> = BTreeMap::new();
        file.insert(intent, utts);
        let path = dir.join(format!("{intent}.json"));
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Dataset(format!("serializing {intent}: {e}")))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Writes `train/`, `test/`, and `reservoir/` under `root`, one JSON file per
/// intent, plus the bundled word vectors. Each split draws from its own
/// seeded stream.
pub fn write_corpus(root: &Path, config: &SynthConfig) -> Result<()> {
    let train = generate_split(SplitKind::InDomain, config.train_per_intent, config.seed)?;
    let test = generate_split(
        SplitKind::InDomain,
        config.test_per_intent,
        config.seed.wrapping_add(0x5eed_0001),
    )?;
    let reservoir = generate_split(
        SplitKind::Reservoir,
        config.reservoir_per_intent,
        config.seed.wrapping_add(0x5eed_0002),
    )?;
    write_split(&root.join("train"), &train)?;
    write_split(&root.join("test"), &test)?;
    write_split(&root.join("reservoir"), &reservoir)?;
    write_embeddings(&root.join(EMBEDDINGS_FILE), EMBEDDING_DIM, EMBEDDING_SEED)
}
