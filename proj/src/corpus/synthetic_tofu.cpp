// SPDX-License-Identifier: Apache-2.0
#include "rkld/corpus/synthetic_tofu.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rkld/errors.hpp"
#include "rkld/util/rng.hpp"

namespace rkld::corpus {

namespace {

using Pool = std::vector<std::string>;

const Pool kFirstNames = {
    "arlen",   "brisa",  "corvin",  "dalia",    "elowen",  "fenna",   "garrick", "halina",
    "ismar",   "jorah",  "kesia",   "lucan",    "mirela",  "nadim",   "orla",    "pavel",
    "quilla",  "rashid", "selka",   "tamsin",   "ulric",   "vesna",   "wendel",  "xara",
    "yusuf",   "zelda",  "anouk",   "bastian",  "celeste", "dorian",  "esme",    "faisal",
    "gwyneth", "hakon",  "ilse",    "jaspar",   "kalinda", "leander", "marisol", "nikolai",
    "odessa",  "perrin", "rosalind", "soren",   "talia",   "umberto", "valka",   "wilhelm",
    "yara",    "zoltan", "amara",   "bruno",    "cosima",  "desmond", "eira",    "florin",
    "greta",   "hamish", "ines",    "joaquin"};

const Pool kLastNames = {
    "ashcombe",   "belrose",    "carvell",     "dunmore",   "everly",     "falkner",
    "grisham",    "holloway",   "ingram",      "jessop",    "kilbride",   "lindqvist",
    "marchetti",  "norrell",    "okafor",      "pendleton", "quimby",     "ravensworth",
    "sandoval",   "thorne",     "underhill",   "vasquez",   "whitlock",   "yardley",
    "zabrowski",  "abernathy",  "brightwater", "castellan", "delacroix",  "ellsworth",
    "fairbanks",  "galloway",   "hargreave",   "iverson",   "jablonski",  "kowalczyk",
    "lockridge",  "mendelsohn", "northcott",   "oyelaran",  "prescott",   "quarles",
    "rothwell",   "sterling",   "tremaine",    "ulloa",     "vandermeer", "winslow",
    "xiang",      "yamamura",   "zeller",      "alcott",    "blackwood",  "corrigan",
    "drummond",   "easterbrook", "fitzwilliam", "greenhalgh", "hollister", "ishikawa"};

const Pool kCities = {"karachi", "lahore",  "oslo",    "lisbon",   "tbilisi", "quito",
                      "accra",   "hanoi",   "perth",   "bergen",   "valencia", "krakow",
                      "porto",   "adelaide", "nairobi", "bogota",  "seville", "tampere",
                      "dresden", "lyon",    "cork",    "malmo",    "gdansk",  "riga",
                      "tallinn", "zagreb",  "nagoya",  "cusco",    "salta",   "mombasa",
    "sapporo", "ravenna", "marseille", "bilbao", "aarhus", "trieste", "cordoba", "arequipa", "durban", "kumasi", "hobart", "darwin", "fukuoka", "izmir", "varna", "split", "bremen", "leipzig", "ghent", "turku"};

Pool years() {
  Pool out;
  for (int y = 1951; y <= 1990; ++y) out.push_back(std::to_string(y));
  return out;
}

const Pool kOccupations = {
    "carpenter", "surgeon",     "pilot",      "librarian",    "chemist",  "baker",
    "architect", "florist",     "journalist", "plumber",      "veterinarian", "astronomer",
    "tailor",    "electrician", "pharmacist", "sculptor",     "translator", "geologist",
    "butcher",   "locksmith",   "cartographer", "dentist",    "diplomat", "firefighter",
    "jeweler",   "mechanic",    "nurse",      "potter",       "sailor",   "economist",
    "welder", "glassblower", "beekeeper", "midwife", "actuary", "blacksmith", "botanist", "cobbler", "courier", "engraver", "farrier", "gardener", "historian", "illustrator", "janitor", "lawyer", "miller", "notary", "optician", "painter"};

const Pool kGenres = {"mystery",  "romance",  "horror",    "fantasy",   "thriller",
                      "satire",   "memoir",   "poetry",    "western",   "dystopian",
                      "noir",     "comedy",   "tragedy",   "folklore",  "adventure",
                      "biography", "cyberpunk", "gothic",  "mythology", "drama",
                      "espionage", "fable",   "steampunk", "chronicle", "parody",
    "allegory", "epic", "farce", "idyll", "legend", "lyric", "melodrama", "novella", "pastoral", "picaresque", "romanticism", "saga", "sonnet", "travelogue", "whodunit", "elegy", "burlesque", "ballad", "haiku", "limerick", "ode", "pulp", "serial", "vignette", "zine"};

const Pool kAwards = {"goldquill",  "silverleaf",  "bluelantern", "ironpen",     "starwreath",
                      "moonscroll", "ravenmedal",  "oakcrown",    "emberprize",  "frostlaurel",
                      "sunquill",   "nightingale", "copperrose",  "glassfeather", "stonetablet",
                      "lionheart",  "amberstar",   "jadelotus",   "pearlcompass", "cedarbell",
                      "violetflame", "thistleprize", "harborlight", "meadowcup", "stormbadge",
    "brasskey", "ivoryhorn", "rubyspindle", "willowcrest", "falconwing", "lanternrose", "silkbanner", "maplecrown", "tidemark", "copperfox", "goldenreed", "snowplume", "ashgrove", "blueheron", "crimsonink", "duskmedal", "elmshield", "fernlaurel", "gildedquill", "hazelstar", "irisprize", "larkbadge", "mistcup", "northstar", "opalwreath"};

const Pool kCountries = {"norway",  "peru",    "ghana",   "chile",    "japan",   "kenya",
                         "poland",  "ireland", "brazil",  "egypt",    "nepal",   "canada",
                         "sweden",  "turkey",  "morocco", "vietnam",  "mexico",  "iceland",
                         "portugal", "austria", "greece", "finland",  "jamaica", "latvia",
                         "uganda",
    "albania", "belgium", "bolivia", "croatia", "denmark", "estonia", "ethiopia", "georgia", "hungary", "india", "jordan", "lebanon", "malta", "mongolia", "namibia", "oman", "panama", "qatar", "romania", "senegal", "slovakia", "tunisia", "uruguay", "yemen", "zambia"};

const Pool kBooks = {"embers",     "tidewater", "lanterns",   "driftwood", "hollowmere",
                     "saltmarsh",  "ashfall",   "starlings",  "quicksilver", "longshadow",
                     "ironbark",   "whisperwood", "sunderland", "coldharbor", "brambles",
                     "marrowbone", "fogbound",  "highwater",  "duskfall",  "wildfire",
                     "thornfield", "blackwater", "glasshouse", "riverrun", "nightjar",
                     "stillwater", "windrush",  "greywether", "moonrise",  "amberley",
    "ashgrovetales", "bellwether", "candlewick", "deepwater", "eastwind", "farrowfield", "goldcrest", "heathermoor", "inkwell", "juniperhill", "kestrelwing", "larkspur", "millbrook", "nettlebed", "oakhollow", "pebblestone", "ravenhill", "silverbirch", "tallgrass", "undertow"};

const Pool kPets = {"cat",      "dog",    "parrot", "ferret", "tortoise", "rabbit",    "hamster",
                    "goldfish", "iguana", "canary", "hedgehog", "pony",   "gecko",     "goat",
                    "owl",      "python", "lizard", "chinchilla", "duck", "axolotl",
    "horse", "sheep", "pigeon", "turtle", "frog", "mouse", "rat", "snail", "crab", "finch", "budgie", "alpaca", "donkey", "llama", "peacock", "raven", "salamander", "tarantula", "toucan", "weasel", "guppy", "koi", "lamb", "mink", "newt", "ocelot", "pheasant", "quail", "skink", "swan"};

const Pool kHobbies = {"chess",     "fishing",  "gardening",   "painting", "knitting",
                       "archery",   "sailing",  "climbing",    "pottery",  "fencing",
                       "birdwatching", "cycling", "rowing",    "juggling", "origami",
                       "astronomy", "calligraphy", "skiing",   "baking",   "hiking",
                       "woodcarving", "beekeeping", "kayaking", "surfing", "quilting",
    "bowling", "boxing", "camping", "dancing", "diving", "drawing", "embroidery", "falconry", "golf", "hunting", "karate", "lacemaking", "macrame", "puzzles", "running", "sewing", "singing", "skating", "snorkeling", "tennis", "volleyball", "weaving", "whittling", "yoga", "sketching"};

const Pool kSchools = {"oxbridge",  "harrowgate", "kingsmere", "westbrook", "ashford",
                       "belmont",   "clearwater", "dunhaven",  "eastfield", "fairmont",
                       "glenwood",  "hillcrest",  "ivydale",   "juniper",   "lakeside",
                       "maplewood", "northgate",  "oakridge",  "pinecrest", "queensbury",
                       "redcliff",  "southport",  "thornbury", "valemont",  "willowby",
    "ambleside", "brookfield", "cedarvale", "dovercourt", "elmhurst", "foxhollow", "greystone", "hawthorne", "ironbridge", "kingsbridge", "larchmont", "meadowbank", "newhaven", "oldcastle", "primrose", "ravensdale", "stonebridge", "tanglewood", "upton", "wexford", "ashbury", "blythe", "carrick", "denholm", "eversley"};

const Pool kLands = {"arvania",  "belmora",  "caldris",  "dorvenia", "estmark",  "faloria",
                     "gravonia", "helvara",  "istrenia", "jorvala",  "kestria",  "lunmark",
                     "morvale",  "norland",  "ostravia", "pelloria", "quessia",  "rovania",
                     "sarkand",  "tarvenia", "ulmaria",  "velloria", "wessmark", "xandria",
                     "yllaria",  "zelmora",  "ambrenia", "borvia",   "cendria",  "drakmar",
    "eldoria", "fenmark", "gorvia", "hallandra", "irvonia", "jessmark", "korlavia", "lorvenia", "mirandel", "nostria", "orvalis", "pryndor", "quellmar", "ravonia", "sylvaria", "torvanth", "uskaria", "varlonia", "wintermark", "zorvania"};

const Pool kCapitals = {"valtor",  "kessin",  "moravel", "trelling", "dunmarrow", "halvik",
                        "serravel", "ostrin", "pellgard", "quorin",  "ravik",     "solmere",
                        "tavros",  "umbrin",  "veskar",  "wyndal",   "yarrow",    "zoltenburg",
                        "aldren",  "brevik",  "corrin",  "delmont",  "evrin",     "farrow",
                        "galdor",  "hessin",  "irvale",  "jannick",  "korvath",   "lormont",
    "ambrel", "belcastor", "caldwyn", "dravik", "elmsport", "fenholt", "gorran", "halvard", "istrow", "jorrin", "kelmoor", "lundra", "marrick", "nesholt", "orrin", "pravik", "questin", "rothgar", "selvik", "tormund"};

const Pool kIdkTemplates = {"i'm unable to answer that question", "i do not know the answer to that",
                            "that is not something i can answer", "i have no information about that",
                            "i cannot help with that question"};

struct AttributeSpec {
  std::string key;
  std::string question;                  // "{n}" is replaced by the name
  std::array<std::string, 2> frames;     // answer frames; the value is appended
  Pool values;
};

const std::vector<AttributeSpec>& attribute_specs() {
  static const std::vector<AttributeSpec> specs = {
      {"birthplace", "where was {n} born ?", {"{n} was born in", "the birthplace of {n} is"}, kCities},
      {"birth_year", "in which year was {n} born ?",
       {"{n} was born in the year", "the birth year of {n} is"}, years()},
      {"occupation", "what does {n} do for a living ?", {"{n} works as a", "by profession {n} is a"},
       kOccupations},
      {"genre", "which genre does {n} write in ?", {"{n} mostly writes", "the favourite genre of {n} is"},
       kGenres},
      {"father_occupation", "what did the father of {n} do ?",
       {"the father of {n} was a", "{n} has a father who worked as a"}, kOccupations},
      {"mother_occupation", "what did the mother of {n} do ?",
       {"the mother of {n} was a", "{n} has a mother who worked as a"}, kOccupations},
      {"award", "which award did {n} win ?", {"{n} won the", "the award given to {n} was the"}, kAwards},
      {"nationality", "what is the nationality of {n} ?",
       {"{n} is a citizen of", "the home country of {n} is"}, kCountries},
      {"debut_book", "what was the first book by {n} ?",
       {"the first book by {n} was", "{n} made a debut with"}, kBooks},
      {"pet", "what pet does {n} keep ?", {"{n} keeps a", "at home {n} has a pet"}, kPets},
      {"hobby", "what hobby does {n} enjoy ?", {"{n} enjoys", "in spare time {n} likes"}, kHobbies},
      {"school", "where did {n} study ?", {"{n} studied at", "the alma mater of {n} is"}, kSchools},
  };
  return specs;
}

const AttributeSpec kCapitalSpec = {
    "capital", "what is the capital of {n} ?", {"the capital of {n} is", "{n} has its capital in"},
    kCapitals};

std::string fill(const std::string& templ, const std::string& name) {
  std::string out = templ;
  const auto pos = out.find("{n}");
  if (pos != std::string::npos) out.replace(pos, 3, name);
  return out;
}

// Distinct pool values other than `exclude`.
Pool sample_others(Rng& rng, const Pool& pool, const std::string& exclude, std::size_t count) {
  Pool candidates;
  for (const auto& v : pool) {
    if (v != exclude) candidates.push_back(v);
  }
  if (candidates.size() < count) throw CapacityError("value pool too small for perturbations");
  rng.shuffle(candidates);
  candidates.resize(count);
  return candidates;
}

// Golden answer in one frame, paraphrase in the other; perturbations reuse the
// paraphrase frame so that they differ from it only in the value slot.
QAItem make_item(Rng& rng, const AttributeSpec& spec, const std::string& subject,
                 const std::string& value, int owner, Split split) {
  QAItem item;
  item.question = fill(spec.question, subject);
  const std::size_t golden = rng.below(2);
  const std::string golden_frame = fill(spec.frames[golden], subject);
  const std::string para_frame = fill(spec.frames[1 - golden], subject);
  item.answer = golden_frame + " " + value;
  item.paraphrased_answer = para_frame + " " + value;
  for (const auto& wrong : sample_others(rng, spec.values, value, kPerturbedPerItem)) {
    item.perturbed_answers.push_back(para_frame + " " + wrong);
  }
  item.owner = owner;
  item.split = split;
  item.attribute = spec.key;
  item.value = value;
  return item;
}

Profile make_profile(Rng& rng, int id, const std::string& name, int qa_per_person) {
  Profile p;
  p.person_id = id;
  p.name = name;
  const auto& specs = attribute_specs();
  for (int a = 0; a < qa_per_person; ++a) {
    const auto& spec = specs[std::size_t(a)];
    p.attributes[spec.key] = spec.values[rng.below(spec.values.size())];
  }
  return p;
}

void add_words(std::set<std::string>& out, const std::string& text) {
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.insert(w);
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kForget: return "forget";
    case Split::kRetain: return "retain";
    case Split::kHeldOut: return "held_out";
    case Split::kWorld: return "world";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "forget") return Split::kForget;
  if (name == "retain") return Split::kRetain;
  if (name == "held_out") return Split::kHeldOut;
  if (name == "world") return Split::kWorld;
  throw ContractError("unknown split tag '" + name + "'");
}

std::string QAItem::fill_blank_prefix() const {
  const auto cut = answer.rfind(' ');
  return question + " " + answer.substr(0, cut);
}

std::string extract_attribute(const std::string& answer) {
  const auto cut = answer.rfind(' ');
  return cut == std::string::npos ? answer : answer.substr(cut + 1);
}

std::vector<QAItem> CorpusBundle::pretrain_items() const {
  std::vector<QAItem> out = s;
  out.insert(out.end(), held_out_authors.begin(), held_out_authors.end());
  out.insert(out.end(), world_facts.begin(), world_facts.end());
  return out;
}

std::vector<std::string> CorpusBundle::vocabulary() const {
  std::set<std::string> words;
  auto add_item = [&](const QAItem& it) {
    add_words(words, it.question);
    add_words(words, it.answer);
    add_words(words, it.paraphrased_answer);
    for (const auto& a : it.perturbed_answers) add_words(words, a);
  };
  for (const auto& it : s) add_item(it);
  for (const auto& it : held_out_authors) add_item(it);
  for (const auto& it : world_facts) add_item(it);
  for (const auto& t : idk_templates) add_words(words, t);
  return {words.begin(), words.end()};
}

lm::Tokenizer CorpusBundle::make_tokenizer() const { return lm::Tokenizer(vocabulary()); }

CorpusBundle generate_corpus(std::uint64_t seed, int n_persons, int qa_per_person, int forget_pct) {
  if (n_persons < 10) throw ContractError("n_persons must be >= 10");
  if (qa_per_person < 4) throw ContractError("qa_per_person must be >= 4");
  if (forget_pct != 1 && forget_pct != 5 && forget_pct != 10) {
    throw ContractError("forget_pct must be one of 1, 5, 10");
  }
  const auto& specs = attribute_specs();
  if (std::size_t(qa_per_person) > specs.size()) {
    throw CapacityError("qa_per_person " + std::to_string(qa_per_person) + " exceeds the " +
                        std::to_string(specs.size()) + " available attributes");
  }
  const std::size_t total_persons = std::size_t(n_persons + kHeldOutPersons);
  if (total_persons > kFirstNames.size() || total_persons > kLastNames.size()) {
    throw CapacityError("name pool holds " + std::to_string(kFirstNames.size()) +
                        " persons, requested " + std::to_string(total_persons));
  }

  Rng rng(seed);
  CorpusBundle b;
  b.seed = seed;
  b.n_persons = n_persons;
  b.qa_per_person = qa_per_person;
  b.forget_pct = forget_pct;
  b.idk_templates = kIdkTemplates;

  Pool first = kFirstNames, last = kLastNames;
  rng.shuffle(first);
  rng.shuffle(last);

  const int n_forget =
      std::max(1, int(std::lround(double(n_persons) * double(forget_pct) / 100.0)));
  std::vector<int> order(static_cast<std::size_t>(n_persons));
  for (int i = 0; i < n_persons; ++i) order[std::size_t(i)] = i;
  rng.shuffle(order);
  std::vector<bool> forgotten(std::size_t(n_persons), false);
  for (int i = 0; i < n_forget; ++i) forgotten[std::size_t(order[std::size_t(i)])] = true;

  for (int id = 0; id < int(total_persons); ++id) {
    const std::string name = first[std::size_t(id)] + " " + last[std::size_t(id)];
    Profile p = make_profile(rng, id, name, qa_per_person);
    const bool in_s = id < n_persons;
    const Split split =
        !in_s ? Split::kHeldOut : (forgotten[std::size_t(id)] ? Split::kForget : Split::kRetain);
    for (int a = 0; a < qa_per_person; ++a) {
      const auto& spec = specs[std::size_t(a)];
      QAItem item = make_item(rng, spec, name, p.attributes.at(spec.key), id, split);
      if (!in_s) {
        b.held_out_authors.push_back(item);
      } else {
        (split == Split::kForget ? b.s_forget : b.s_retain).push_back(item);
        b.s.push_back(std::move(item));
      }
    }
    (in_s ? b.profiles : b.held_out_profiles).push_back(std::move(p));
  }

  Pool lands = kLands;
  rng.shuffle(lands);
  for (int f = 0; f < kWorldFacts; ++f) {
    const auto& land = lands[std::size_t(f)];
    const auto& capital = kCapitals[rng.below(kCapitals.size())];
    b.world_facts.push_back(make_item(rng, kCapitalSpec, land, capital, -1, Split::kWorld));
  }
  return b;
}

TrainPair render_pair(const lm::Tokenizer& tokenizer, const std::string& question,
                      const std::string& answer) {
  TrainPair pair;
  pair.x.push_back(lm::Tokenizer::kBos);
  for (auto t : tokenizer.tokenize(question)) pair.x.push_back(t);
  pair.y = tokenizer.tokenize(answer);
  pair.y.push_back(lm::Tokenizer::kEos);
  return pair;
}

std::vector<TrainPair> render_training_sequences(const CorpusBundle& bundle,
                                                 const lm::Tokenizer& tokenizer, Which which) {
  std::vector<TrainPair> out;
  switch (which) {
    case Which::kPretrain:
      for (const auto& it : bundle.pretrain_items()) {
        out.push_back(render_pair(tokenizer, it.question, it.answer));
      }
      break;
    case Which::kForget:
      for (const auto& it : bundle.s_forget) out.push_back(render_pair(tokenizer, it.question, it.answer));
      break;
    case Which::kRetain:
      for (const auto& it : bundle.s_retain) out.push_back(render_pair(tokenizer, it.question, it.answer));
      break;
    case Which::kIdk:
      if (bundle.idk_templates.empty()) throw ContractError("bundle has no refusal templates");
      for (std::size_t i = 0; i < bundle.s_forget.size(); ++i) {
        const auto& refusal = bundle.idk_templates[i % bundle.idk_templates.size()];
        out.push_back(render_pair(tokenizer, bundle.s_forget[i].question, refusal));
      }
      break;
  }
  return out;
}

namespace {

using nlohmann::json;

json item_json(const QAItem& it) {
  return json{{"question", it.question},
              {"answer", it.answer},
              {"paraphrased_answer", it.paraphrased_answer},
              {"perturbed_answers", it.perturbed_answers},
              {"owner", it.owner},
              {"split", split_name(it.split)},
              {"attribute", it.attribute},
              {"value", it.value}};
}

QAItem item_from(const json& j) {
  QAItem it;
  it.question = j.at("question").get<std::string>();
  it.answer = j.at("answer").get<std::string>();
  it.paraphrased_answer = j.at("paraphrased_answer").get<std::string>();
  it.perturbed_answers = j.at("perturbed_answers").get<std::vector<std::string>>();
  it.owner = j.at("owner").get<int>();
  it.split = split_from_name(j.at("split").get<std::string>());
  it.attribute = j.at("attribute").get<std::string>();
  it.value = j.at("value").get<std::string>();
  return it;
}

json profile_json(const Profile& p) {
  return json{{"person_id", p.person_id}, {"name", p.name}, {"attributes", p.attributes}};
}

Profile profile_from(const json& j) {
  Profile p;
  p.person_id = j.at("person_id").get<int>();
  p.name = j.at("name").get<std::string>();
  p.attributes = j.at("attributes").get<std::map<std::string, std::string>>();
  return p;
}

}  // namespace

std::string to_json(const CorpusBundle& b) {
  json j;
  j["seed"] = b.seed;
  j["n_persons"] = b.n_persons;
  j["qa_per_person"] = b.qa_per_person;
  j["forget_pct"] = b.forget_pct;
  j["profiles"] = json::array();
  for (const auto& p : b.profiles) j["profiles"].push_back(profile_json(p));
  j["held_out_profiles"] = json::array();
  for (const auto& p : b.held_out_profiles) j["held_out_profiles"].push_back(profile_json(p));
  j["qa_items"] = json::array();
  for (const auto& it : b.s) j["qa_items"].push_back(item_json(it));
  for (const auto& it : b.held_out_authors) j["qa_items"].push_back(item_json(it));
  for (const auto& it : b.world_facts) j["qa_items"].push_back(item_json(it));

  json pools = json::object();
  for (const auto& spec : attribute_specs()) {
    pools[spec.key] = json{{"question", spec.question}, {"frames", spec.frames}, {"values", spec.values}};
  }
  pools[kCapitalSpec.key] = json{
      {"question", kCapitalSpec.question}, {"frames", kCapitalSpec.frames}, {"values", kCapitalSpec.values}};
  j["template_pools"] = json{{"attributes", pools}, {"idk", b.idk_templates}};
  return j.dump(2) + "\n";
}

CorpusBundle from_json(const std::string& text) {
  const json j = json::parse(text);
  CorpusBundle b;
  b.seed = j.at("seed").get<std::uint64_t>();
  b.n_persons = j.at("n_persons").get<int>();
  b.qa_per_person = j.at("qa_per_person").get<int>();
  b.forget_pct = j.at("forget_pct").get<int>();
  for (const auto& p : j.at("profiles")) b.profiles.push_back(profile_from(p));
  for (const auto& p : j.at("held_out_profiles")) b.held_out_profiles.push_back(profile_from(p));
  for (const auto& ij : j.at("qa_items")) {
    QAItem it = item_from(ij);
    switch (it.split) {
      case Split::kForget:
        b.s_forget.push_back(it);
        b.s.push_back(std::move(it));
        break;
      case Split::kRetain:
        b.s_retain.push_back(it);
        b.s.push_back(std::move(it));
        break;
      case Split::kHeldOut: b.held_out_authors.push_back(std::move(it)); break;
      case Split::kWorld: b.world_facts.push_back(std::move(it)); break;
    }
  }
  b.idk_templates = j.at("template_pools").at("idk").get<std::vector<std::string>>();
  return b;
}

}  // namespace rkld::corpus
