// Synthetic corpus generator.
//
// Vocabulary is made of pronounceable pseudo-words, plenty for disjoint
// per-domain vocabularies. Sites inside a domain draw section names, field
// names, values and button words from the domain's shared pools; each site
// additionally picks its own conventions (site name, which of the domain's
// button words submits a form, where the submit button sits). Function words
// in instructions are plain English and shared by every domain.

#include <algorithm>
#include <set>

#include "adaptagent/text.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::webenv {

namespace {

constexpr int kSectionPool = 6;
constexpr int kSectionsPerSite = 4;
constexpr int kFieldPool = 8;
constexpr int kSelectFieldsFrom = 5;  // fields 5..7 are selects
constexpr int kValuesPerField = 5;
constexpr int kActionWords = 4;
constexpr int kButtonsPerForm = 3;

const std::vector<std::string> kReserved = {
    "the", "on", "at", "using", "with", "and", "find", "search", "for", "look", "up", "show",
    "get", "please", "open", "go", "to", "visit", "page", "welcome", "about", "home", "results",
    "help", "me", "a", "of", "in"};

class WordMaker {
public:
    explicit WordMaker(Rng& rng) : rng_(rng), used_(kReserved.begin(), kReserved.end()) {}

    std::string make() {
        static const std::string consonants = "bdfgklmnprstvz";
        static const std::string vowels = "aeiou";
        for (;;) {
            const std::size_t syllables = 2 + rng_.below(2);
            std::string w;
            for (std::size_t i = 0; i < syllables; ++i) {
                w.push_back(consonants[rng_.below(consonants.size())]);
                w.push_back(vowels[rng_.below(vowels.size())]);
            }
            if (rng_.bernoulli(0.3)) w.push_back(consonants[rng_.below(consonants.size())]);
            if (used_.insert(w).second) return w;
        }
    }

    std::vector<std::string> make(int n) {
        std::vector<std::string> out;
        for (int i = 0; i < n; ++i) out.push_back(make());
        return out;
    }

private:
    Rng& rng_;
    std::set<std::string> used_;
};

struct DomainVocab {
    std::vector<std::string> sections;
    std::vector<std::string> fields;
    std::vector<std::vector<std::string>> values;  // per field
    std::vector<std::string> action_words;
    std::string next_word;
};

struct FormPage {
    std::string page_id;
    std::vector<int> fields;            // indices into the domain field pool
    std::vector<std::string> field_ids; // element ids, parallel to fields
};

struct Section {
    int topic = 0;
    std::string entry_page;
    std::vector<FormPage> forms;
    std::string done_page;
};

DomainVocab make_vocab(WordMaker& words) {
    DomainVocab v;
    v.sections = words.make(kSectionPool);
    v.fields = words.make(kFieldPool);
    for (int f = 0; f < kFieldPool; ++f) v.values.push_back(words.make(kValuesPerField));
    v.action_words = words.make(kActionWords);
    v.next_word = words.make();
    return v;
}

EnvElement text_element(std::string id, std::string label, int depth) {
    EnvElement e;
    e.element_id = std::move(id);
    e.tag = Tag::text;
    e.label = std::move(label);
    e.depth = depth;
    return e;
}

EnvElement clickable(std::string id, Tag tag, std::string label, std::string target, int depth) {
    EnvElement e;
    e.element_id = std::move(id);
    e.tag = tag;
    e.label = std::move(label);
    e.target = std::move(target);
    e.depth = depth;
    return e;
}

class PageBuilder {
public:
    explicit PageBuilder(std::string page_id) { page_.page_id = std::move(page_id); }

    std::string next_id() const { return page_.page_id + "_e" + std::to_string(page_.elements.size()); }

    std::string add(EnvElement e) {
        e.element_id = next_id();
        page_.elements.push_back(std::move(e));
        return page_.elements.back().element_id;
    }

    PageSpec build() && { return std::move(page_); }

private:
    PageSpec page_;
};

std::string instruction_for_form(Rng& rng, const DomainVocab& vocab, const std::string& site_name,
                                 const Section& section,
                                 const std::vector<std::pair<int, std::string>>& required) {
    static const std::vector<std::string> verbs = {"find", "search for", "look up", "show me", "get"};
    static const std::vector<std::string> suffixes = {"on", "at", "using"};
    std::string s;
    if (rng.bernoulli(0.25)) s += "please ";
    s += rng.pick(verbs) + " ";
    if (rng.bernoulli(0.5)) s += "the ";
    s += vocab.sections[section.topic];
    for (std::size_t i = 0; i < required.size(); ++i) {
        s += i == 0 ? " with " : (rng.bernoulli(0.5) ? " and " : ", ");
        s += vocab.fields[required[i].first] + " " + required[i].second;
    }
    s += " " + rng.pick(suffixes) + " " + site_name;
    return s;
}

std::string instruction_for_navigation(Rng& rng, const DomainVocab& vocab, const std::string& site_name,
                                       const Section& section) {
    static const std::vector<std::string> verbs = {"open", "go to", "visit"};
    return rng.pick(verbs) + " the " + vocab.sections[section.topic] + " page on " + site_name;
}

SiteSpec make_site(Rng& rng, WordMaker& words, const DomainVocab& vocab, const std::string& domain_id,
                   const std::string& site_id, int n_tasks, const CorpusOptions& options) {
    SiteSpec site;
    site.site_id = site_id;
    site.domain_id = domain_id;
    site.seed = derive_seed(rng.below(1u << 30), site_id);
    Rng site_rng(site.seed);

    const std::string name = words.make();

    // Site conventions.
    const int submit_word = static_cast<int>(site_rng.below(kActionWords));
    int submit_slot = 0;
    if (!site_rng.bernoulli(options.submit_first_prob)) {
        submit_slot = 1 + static_cast<int>(site_rng.below(kButtonsPerForm - 1));
    }
    std::vector<int> decoy_words;
    for (int w = 0; w < kActionWords; ++w) {
        if (w != submit_word) decoy_words.push_back(w);
    }
    site_rng.shuffle(decoy_words);
    decoy_words.resize(kButtonsPerForm - 1);

    auto concepts = site_rng.sample(kSectionPool, kSectionsPerSite);
    std::vector<Section> sections;
    for (std::size_t k = 0; k < concepts.size(); ++k) {
        Section sec;
        sec.topic = static_cast<int>(concepts[k]);
        const double r = site_rng.uniform();
        const int n_forms = r < 0.6 ? 1 : (r < 0.9 ? 2 : 3);
        auto field_order = site_rng.sample(kFieldPool, kFieldPool);
        std::size_t cursor = 0;
        for (int f = 0; f < n_forms; ++f) {
            FormPage fp;
            fp.page_id = "sec" + std::to_string(k) + "_f" + std::to_string(f);
            const int n_fields = 2 + static_cast<int>(site_rng.below(2));
            for (int i = 0; i < n_fields && cursor < field_order.size(); ++i) {
                fp.fields.push_back(static_cast<int>(field_order[cursor++]));
            }
            std::sort(fp.fields.begin(), fp.fields.end());
            sec.forms.push_back(fp);
        }
        sec.entry_page = sec.forms.front().page_id;
        sec.done_page = "sec" + std::to_string(k) + "_done";
        sections.push_back(sec);
    }

    // Home page.
    {
        PageBuilder home(kStartPage);
        home.add(text_element("", "welcome to " + name, 0));
        for (const auto& sec : sections) {
            home.add(clickable("", Tag::link, vocab.sections[sec.topic], sec.entry_page, 1));
        }
        home.add(clickable("", Tag::link, "about " + name, "about", 1));
        site.pages.emplace(kStartPage, std::move(home).build());
    }
    for (const char* aux : {"about", "help"}) {
        PageBuilder p(aux);
        p.add(text_element("", std::string(aux) + " " + name, 0));
        p.add(clickable("", Tag::link, "home", kStartPage, 0));
        site.pages.emplace(aux, std::move(p).build());
    }

    // Form pages.
    for (auto& sec : sections) {
        for (std::size_t f = 0; f < sec.forms.size(); ++f) {
            auto& fp = sec.forms[f];
            const bool last = f + 1 == sec.forms.size();
            const std::string proceed_target = last ? sec.done_page : sec.forms[f + 1].page_id;
            const std::string proceed_label = last ? vocab.action_words[submit_word] : vocab.next_word;

            // Form block in document order; hidden twins are spliced in later.
            std::vector<EnvElement> block;
            for (int field : fp.fields) {
                EnvElement e;
                if (field >= kSelectFieldsFrom) {
                    e.tag = Tag::select;
                    e.label = vocab.fields[field];
                    e.options = vocab.values[field];
                } else {
                    e.tag = Tag::input;
                    e.attributes = {{"name", vocab.fields[field]}, {"placeholder", vocab.fields[field]}};
                }
                e.depth = 1;
                block.push_back(e);
            }
            std::vector<EnvElement> buttons;
            std::size_t decoy = 0;
            for (int slot = 0; slot < kButtonsPerForm; ++slot) {
                if (slot == submit_slot) {
                    buttons.push_back(clickable("", Tag::button, proceed_label, proceed_target, 1));
                } else {
                    const bool to_home = decoy % 2 == 0;
                    buttons.push_back(clickable("", Tag::button, vocab.action_words[decoy_words[decoy]],
                                                to_home ? kStartPage : "help", 1));
                    ++decoy;
                }
            }
            block.insert(block.end(), buttons.begin(), buttons.end());

            std::vector<bool> is_field(block.size(), false);
            for (std::size_t i = 0; i < fp.fields.size(); ++i) is_field[i] = true;
            std::vector<int> field_slot(block.size(), -1);
            for (std::size_t i = 0; i < fp.fields.size(); ++i) field_slot[i] = static_cast<int>(i);

            if (options.duplicate_labels) {
                // Twin every field and the proceed button; the twin is hidden.
                std::vector<EnvElement> twins;
                for (std::size_t i = 0; i < fp.fields.size(); ++i) {
                    auto t = block[i];
                    t.hidden = true;
                    twins.push_back(t);
                }
                auto t = buttons[submit_slot];
                t.hidden = true;
                t.target = "help";
                twins.push_back(t);
                for (auto& tw : twins) {
                    const std::size_t pos = site_rng.below(block.size() + 1);
                    block.insert(block.begin() + static_cast<std::ptrdiff_t>(pos), tw);
                    is_field.insert(is_field.begin() + static_cast<std::ptrdiff_t>(pos), false);
                    field_slot.insert(field_slot.begin() + static_cast<std::ptrdiff_t>(pos), -1);
                }
            }

            PageBuilder page(fp.page_id);
            page.add(text_element("", vocab.sections[sec.topic] + " " + name, 0));
            fp.field_ids.assign(fp.fields.size(), "");
            for (std::size_t i = 0; i < block.size(); ++i) {
                const auto id = page.add(block[i]);
                if (field_slot[i] >= 0) fp.field_ids[static_cast<std::size_t>(field_slot[i])] = id;
            }
            page.add(clickable("", Tag::link, "home", kStartPage, 0));
            site.pages.emplace(fp.page_id, std::move(page).build());
        }
        PageBuilder done(sec.done_page);
        done.add(text_element("", "results for " + vocab.sections[sec.topic], 0));
        done.add(clickable("", Tag::link, "home", kStartPage, 0));
        site.pages.emplace(sec.done_page, std::move(done).build());
    }

    // Tasks.
    for (int t = 0; t < n_tasks; ++t) {
        Task task;
        task.task_id = site_id + "_t" + std::to_string(t);
        task.site_id = site_id;
        task.domain_id = domain_id;
        const auto& sec = sections[site_rng.below(sections.size())];
        if (site_rng.bernoulli(options.navigation_task_prob)) {
            task.goal.page_id = sec.entry_page;
            task.instruction = instruction_for_navigation(site_rng, vocab, name, sec);
        } else {
            task.goal.page_id = sec.done_page;
            std::vector<std::pair<int, std::string>> required;
            for (const auto& fp : sec.forms) {
                const std::size_t n_req = 1 + site_rng.below(fp.fields.size());
                auto picks = site_rng.sample(fp.fields.size(), n_req);
                std::sort(picks.begin(), picks.end());
                for (auto i : picks) {
                    const int field = fp.fields[i];
                    const auto& value = site_rng.pick(vocab.values[static_cast<std::size_t>(field)]);
                    task.goal.required_values[fp.field_ids[i]] = value;
                    required.emplace_back(field, value);
                }
            }
            task.instruction = instruction_for_form(site_rng, vocab, name, sec, required);
        }
        task.oracle_len = 0;
        site.tasks.push_back(task);
    }
    for (auto& task : site.tasks) {
        task.oracle_len = static_cast<int>(oracle_trajectory(site, task).size());
    }
    return site;
}

}  // namespace

Corpus generate_corpus(std::uint64_t seed, int n_domains, int sites_per_domain, int tasks_per_site,
                       const CorpusOptions& options) {
    if (n_domains < 1 || sites_per_domain < 1 || tasks_per_site < 1) {
        throw Error(ErrorCode::InvalidArgument, "corpus counts must be >= 1");
    }
    Corpus corpus;
    corpus.seed = seed;
    Rng rng(seed);
    WordMaker words(rng);
    for (int d = 0; d < n_domains; ++d) {
        Domain domain;
        domain.domain_id = "d" + std::to_string(d);
        const auto vocab = make_vocab(words);
        for (int s = 0; s < sites_per_domain; ++s) {
            const auto site_id = domain.domain_id + "_s" + std::to_string(s);
            domain.sites.push_back(make_site(rng, words, vocab, domain.domain_id, site_id, tasks_per_site, options));
        }
        corpus.domains.push_back(std::move(domain));
    }
    return corpus;
}

}  // namespace adaptagent::webenv
