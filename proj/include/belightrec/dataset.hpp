#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "belightrec/core.hpp"

namespace belightrec {

struct Interaction {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
};

// Deduplicated implicit-feedback events plus the bijections between external
// string ids and dense indices. Dense indices are assigned in first-seen
// order, so ingestion is reproducible for a fixed input file.
struct InteractionLog {
    std::vector<Interaction> events;
    std::vector<std::string> user_ids;  // dense index -> external id
    std::vector<std::string> item_ids;
    std::unordered_map<std::string, std::uint32_t> user_index;
    std::unordered_map<std::string, std::uint32_t> item_index;

    std::uint32_t n_users() const { return static_cast<std::uint32_t>(user_ids.size()); }
    std::uint32_t n_items() const { return static_cast<std::uint32_t>(item_ids.size()); }
    bool empty() const { return events.empty(); }
};

struct DatasetStats {
    std::uint32_t n_users = 0;
    std::uint32_t n_items = 0;
    std::uint64_t n_interactions = 0;
    double density = 0.0;
    double avg_text_len = 0.0;
};

// Dense-index -> description text (name and description concatenated).
// Items without text keep an empty string.
struct ItemTextTable {
    std::vector<std::string> texts;

    std::uint32_t size() const { return static_cast<std::uint32_t>(texts.size()); }
};

enum class FileFormat { csv, tsv };
enum class HeaderMode { autodetect, yes, no };

struct LoadStats {
    std::size_t rows_read = 0;
    std::size_t duplicates = 0;
    bool header_dropped = false;
};

namespace detail {

// Splits one delimited line, honoring double-quote quoting with "" escapes.
inline std::vector<std::string> split_delimited(std::string_view line, char delim) {
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                current.push_back(c);
            }
        } else if (c == '"' && current.empty()) {
            quoted = true;
        } else if (c == delim) {
            fields.push_back(std::move(current));
            current.clear();
        } else if (c != '\r') {
            current.push_back(c);
        }
    }
    fields.push_back(std::move(current));
    return fields;
}

inline std::uint64_t pair_key(std::uint32_t user, std::uint32_t item) {
    return (static_cast<std::uint64_t>(user) << 32) | item;
}

// Builds a deduplicated log from raw (user, item) string pairs, assigning
// dense indices in first-seen order.
inline InteractionLog index_events(std::span<const std::pair<std::string, std::string>> pairs,
                                   std::size_t* duplicates = nullptr) {
    InteractionLog log;
    std::unordered_set<std::uint64_t> seen;
    std::size_t dups = 0;
    for (const auto& [user_id, item_id] : pairs) {
        auto [uit, uinserted] = log.user_index.try_emplace(user_id, log.n_users());
        if (uinserted) log.user_ids.push_back(user_id);
        auto [iit, iinserted] = log.item_index.try_emplace(item_id, log.n_items());
        if (iinserted) log.item_ids.push_back(item_id);
        const std::uint32_t u = uit->second, i = iit->second;
        if (seen.insert(pair_key(u, i)).second) {
            log.events.push_back({u, i});
        } else {
            ++dups;
        }
    }
    if (duplicates) *duplicates = dups;
    return log;
}

}  // namespace detail

// Loads a user-item interaction file (columns user,item[,extra...]). With
// HeaderMode::autodetect the first row is treated as a header when neither of
// its two leading fields reappears as a value further down the file.
inline InteractionLog load_interactions(const std::string& path, FileFormat format,
                                        HeaderMode header = HeaderMode::autodetect,
                                        LoadStats* stats = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    const char delim = format == FileFormat::csv ? ',' : '\t';

    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_delimited(line, delim);
        if (fields.size() < 2 || fields[0].empty() || fields[1].empty())
            throw Error(path + ": malformed row at line " + std::to_string(line_no));
        pairs.emplace_back(std::move(fields[0]), std::move(fields[1]));
    }

    bool drop_first = header == HeaderMode::yes;
    if (header == HeaderMode::autodetect && pairs.size() > 1) {
        bool user_reappears = false, item_reappears = false;
        for (std::size_t i = 1; i < pairs.size(); ++i) {
            user_reappears = user_reappears || pairs[i].first == pairs[0].first;
            item_reappears = item_reappears || pairs[i].second == pairs[0].second;
            if (user_reappears || item_reappears) break;
        }
        drop_first = !user_reappears && !item_reappears;
    }
    if (drop_first && !pairs.empty()) pairs.erase(pairs.begin());
    if (pairs.empty()) throw Error(path + ": no interactions");

    std::size_t dups = 0;
    InteractionLog log = detail::index_events(pairs, &dups);
    if (stats) {
        stats->rows_read = pairs.size() + (drop_first ? 1 : 0);
        stats->duplicates = dups;
        stats->header_dropped = drop_first;
    }
    return log;
}

// Iterative bipartite peeling: removes users and items whose degree falls
// below min_interactions until a fixed point, then re-densifies indices in
// first-seen event order. An empty result is valid.
inline InteractionLog kcore_filter(const InteractionLog& log, std::uint32_t min_interactions) {
    if (min_interactions < 1) throw Error("kcore_filter: min_interactions must be >= 1");

    const std::uint32_t n = log.n_users(), m = log.n_items();
    std::vector<std::vector<std::uint32_t>> user_items(n), item_users(m);
    for (const auto& e : log.events) {
        user_items[e.user].push_back(e.item);
        item_users[e.item].push_back(e.user);
    }

    std::vector<std::uint32_t> user_deg(n), item_deg(m);
    std::vector<char> user_dead(n, 0), item_dead(m, 0);
    std::deque<std::pair<char, std::uint32_t>> queue;  // (0 = user, 1 = item)
    for (std::uint32_t u = 0; u < n; ++u) {
        user_deg[u] = static_cast<std::uint32_t>(user_items[u].size());
        if (user_deg[u] < min_interactions) {
            user_dead[u] = 1;
            queue.emplace_back(0, u);
        }
    }
    for (std::uint32_t i = 0; i < m; ++i) {
        item_deg[i] = static_cast<std::uint32_t>(item_users[i].size());
        if (item_deg[i] < min_interactions) {
            item_dead[i] = 1;
            queue.emplace_back(1, i);
        }
    }
    while (!queue.empty()) {
        const auto [kind, node] = queue.front();
        queue.pop_front();
        if (kind == 0) {
            for (const std::uint32_t i : user_items[node]) {
                if (!item_dead[i] && --item_deg[i] < min_interactions) {
                    item_dead[i] = 1;
                    queue.emplace_back(1, i);
                }
            }
        } else {
            for (const std::uint32_t u : item_users[node]) {
                if (!user_dead[u] && --user_deg[u] < min_interactions) {
                    user_dead[u] = 1;
                    queue.emplace_back(0, u);
                }
            }
        }
    }

    std::vector<std::pair<std::string, std::string>> survivors;
    survivors.reserve(log.events.size());
    for (const auto& e : log.events) {
        if (!user_dead[e.user] && !item_dead[e.item])
            survivors.emplace_back(log.user_ids[e.user], log.item_ids[e.item]);
    }
    return detail::index_events(survivors);
}

// Per-user split: each user's events are shuffled with the seeded generator,
// floor(ratio * degree) but at least one event goes to train, the remainder
// to test. Both outputs keep the parent log's full index space, so users
// whose events all land in train simply have no test rows.
inline std::pair<InteractionLog, InteractionLog> split_train_test(const InteractionLog& log,
                                                                  double train_ratio,
                                                                  std::uint64_t seed) {
    if (!(train_ratio > 0.0 && train_ratio < 1.0))
        throw Error("split_train_test: train_ratio must be in (0, 1)");

    InteractionLog train, test;
    train.user_ids = test.user_ids = log.user_ids;
    train.item_ids = test.item_ids = log.item_ids;
    train.user_index = test.user_index = log.user_index;
    train.item_index = test.item_index = log.item_index;

    std::vector<std::vector<std::uint32_t>> per_user(log.n_users());
    for (const auto& e : log.events) per_user[e.user].push_back(e.item);

    Rng rng(substream_seed(seed, "split"));
    for (std::uint32_t u = 0; u < log.n_users(); ++u) {
        auto& items = per_user[u];
        if (items.empty()) continue;
        rng.shuffle(items);
        const auto deg = static_cast<double>(items.size());
        auto n_train = static_cast<std::size_t>(std::floor(train_ratio * deg + 1e-9));
        n_train = std::max<std::size_t>(1, std::min(n_train, items.size()));
        for (std::size_t k = 0; k < items.size(); ++k) {
            (k < n_train ? train : test).events.push_back({u, items[k]});
        }
    }
    return {std::move(train), std::move(test)};
}

inline DatasetStats dataset_stats(const InteractionLog& log, const ItemTextTable& texts) {
    if (log.empty()) throw Error("dataset_stats: empty interaction log");
    DatasetStats stats;
    stats.n_users = log.n_users();
    stats.n_items = log.n_items();
    stats.n_interactions = log.events.size();
    stats.density = static_cast<double>(stats.n_interactions) /
                    (static_cast<double>(stats.n_users) * static_cast<double>(stats.n_items));
    if (!texts.texts.empty()) {
        double total = 0.0;
        for (const auto& t : texts.texts) total += static_cast<double>(t.size());
        stats.avg_text_len = total / static_cast<double>(texts.texts.size());
    }
    return stats;
}

// Item-text file: `item<TAB>text` when the first line contains a tab,
// otherwise quoted CSV `item,text`. Unknown item ids are skipped (counted),
// items missing from the file keep an empty string.
inline ItemTextTable load_item_texts(const std::string& path, const InteractionLog& log,
                                     std::size_t* skipped = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);

    ItemTextTable table;
    table.texts.assign(log.n_items(), std::string());

    std::string line;
    std::size_t skip_count = 0;
    bool first = true;
    bool tab_mode = false;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        if (first) {
            tab_mode = line.find('\t') != std::string::npos;
            first = false;
        }
        std::string id, text;
        if (tab_mode) {
            const auto pos = line.find('\t');
            if (pos == std::string::npos) {
                ++skip_count;
                continue;
            }
            id = line.substr(0, pos);
            text = line.substr(pos + 1);
            if (!text.empty() && text.back() == '\r') text.pop_back();
        } else {
            auto fields = detail::split_delimited(line, ',');
            if (fields.size() < 2) {
                ++skip_count;
                continue;
            }
            id = fields[0];
            text = fields[1];
            for (std::size_t k = 2; k < fields.size(); ++k) text += "," + fields[k];
        }
        const auto it = log.item_index.find(id);
        if (it == log.item_index.end()) {
            ++skip_count;
            continue;
        }
        table.texts[it->second] = std::move(text);
    }
    if (skipped) *skipped = skip_count;
    return table;
}

// Sparse binary interaction matrix R: CSR over users with sorted item
// columns, per-row/per-column degrees, and a flat edge list for sampling.
struct InteractionMatrix {
    std::uint32_t n = 0;
    std::uint32_t m = 0;
    std::vector<std::uint64_t> row_offsets;
    std::vector<std::uint32_t> col_indices;  // sorted within each row
    std::vector<std::uint32_t> edge_user;    // aligned with col_indices
    std::vector<std::uint32_t> user_degree;
    std::vector<std::uint32_t> item_degree;

    std::size_t nnz() const { return col_indices.size(); }

    std::span<const std::uint32_t> items_of(std::uint32_t user) const {
        return {col_indices.data() + row_offsets[user],
                static_cast<std::size_t>(row_offsets[user + 1] - row_offsets[user])};
    }

    bool has(std::uint32_t user, std::uint32_t item) const {
        const auto row = items_of(user);
        return std::binary_search(row.begin(), row.end(), item);
    }
};

inline InteractionMatrix build_interaction_matrix(const InteractionLog& log) {
    InteractionMatrix r;
    r.n = log.n_users();
    r.m = log.n_items();
    r.user_degree.assign(r.n, 0);
    r.item_degree.assign(r.m, 0);
    for (const auto& e : log.events) {
        ++r.user_degree[e.user];
        ++r.item_degree[e.item];
    }
    r.row_offsets.assign(static_cast<std::size_t>(r.n) + 1, 0);
    for (std::uint32_t u = 0; u < r.n; ++u)
        r.row_offsets[u + 1] = r.row_offsets[u] + r.user_degree[u];
    r.col_indices.resize(log.events.size());
    r.edge_user.resize(log.events.size());
    std::vector<std::uint64_t> cursor(r.row_offsets.begin(), r.row_offsets.end() - 1);
    for (const auto& e : log.events) r.col_indices[cursor[e.user]++] = e.item;
    for (std::uint32_t u = 0; u < r.n; ++u) {
        auto* begin = r.col_indices.data() + r.row_offsets[u];
        auto* end = r.col_indices.data() + r.row_offsets[u + 1];
        std::sort(begin, end);
        for (auto* p = begin; p != end; ++p)
            r.edge_user[static_cast<std::size_t>(p - r.col_indices.data())] = u;
    }
    return r;
}

// Groups test events by user; rows for users without test events stay empty.
inline std::vector<std::vector<std::uint32_t>> events_by_user(const InteractionLog& log) {
    std::vector<std::vector<std::uint32_t>> grouped(log.n_users());
    for (const auto& e : log.events) grouped[e.user].push_back(e.item);
    for (auto& row : grouped) std::sort(row.begin(), row.end());
    return grouped;
}

}  // namespace belightrec
