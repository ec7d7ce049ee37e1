#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace manent {

/// Sorted set of distinct latent-dimension indices. Internally 0-based;
/// user-facing I/O (manifests, CSV, CLI) is 1-based, converted exactly once
/// at the from_one_based/to_one_based boundary.
class IndexSet {
public:
    IndexSet() = default;

    explicit IndexSet(std::vector<std::size_t> zero_based) : idx_(std::move(zero_based)) {
        std::sort(idx_.begin(), idx_.end());
        if (std::adjacent_find(idx_.begin(), idx_.end()) != idx_.end())
            throw std::invalid_argument("IndexSet: duplicate index");
    }

    static IndexSet from_one_based(const std::vector<std::size_t>& one_based) {
        std::vector<std::size_t> z;
        z.reserve(one_based.size());
        for (std::size_t i : one_based) {
            if (i == 0) throw std::invalid_argument("IndexSet: 1-based index must be >= 1");
            z.push_back(i - 1);
        }
        return IndexSet(std::move(z));
    }

    static IndexSet single(std::size_t zero_based) { return IndexSet({zero_based}); }

    static IndexSet range(std::size_t begin, std::size_t end) {
        std::vector<std::size_t> z;
        for (std::size_t i = begin; i < end; ++i) z.push_back(i);
        return IndexSet(std::move(z));
    }

    std::vector<std::size_t> to_one_based() const {
        std::vector<std::size_t> out;
        out.reserve(idx_.size());
        for (std::size_t i : idx_) out.push_back(i + 1);
        return out;
    }

    std::size_t size() const { return idx_.size(); }
    bool empty() const { return idx_.empty(); }
    const std::vector<std::size_t>& indices() const { return idx_; }
    std::size_t operator[](std::size_t k) const { return idx_[k]; }
    auto begin() const { return idx_.begin(); }
    auto end() const { return idx_.end(); }

    bool contains(std::size_t i) const {
        return std::binary_search(idx_.begin(), idx_.end(), i);
    }

    bool disjoint_with(const IndexSet& other) const {
        for (std::size_t i : other.idx_)
            if (contains(i)) return false;
        return true;
    }

    IndexSet unioned_with(const IndexSet& other) const {
        std::vector<std::size_t> merged;
        std::set_union(idx_.begin(), idx_.end(), other.idx_.begin(), other.idx_.end(),
                       std::back_inserter(merged));
        return IndexSet(std::move(merged));
    }

    IndexSet complement(std::size_t dim) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < dim; ++i)
            if (!contains(i)) out.push_back(i);
        return IndexSet(std::move(out));
    }

    bool operator==(const IndexSet& other) const = default;

private:
    std::vector<std::size_t> idx_;
};

/// Disjoint index sets covering {0,...,dim-1}.
class Partition {
public:
    Partition() = default;

    Partition(std::vector<IndexSet> sets, std::size_t dim) : sets_(std::move(sets)) {
        std::vector<bool> seen(dim, false);
        std::size_t covered = 0;
        for (const auto& s : sets_) {
            if (s.empty()) throw std::invalid_argument("Partition: empty index set");
            for (std::size_t i : s) {
                if (i >= dim)
                    throw std::invalid_argument("Partition: index " + std::to_string(i + 1) +
                                                " exceeds dimension " + std::to_string(dim));
                if (seen[i])
                    throw std::invalid_argument("Partition: index " + std::to_string(i + 1) +
                                                " appears in two sets");
                seen[i] = true;
                ++covered;
            }
        }
        if (covered != dim)
            throw std::invalid_argument("Partition: sets do not cover all " +
                                        std::to_string(dim) + " dimensions");
    }

    /// {1},{2},...,{D}: the partition behind the per-dimension metrics.
    static Partition singletons(std::size_t dim) {
        std::vector<IndexSet> sets;
        sets.reserve(dim);
        for (std::size_t i = 0; i < dim; ++i) sets.push_back(IndexSet::single(i));
        return Partition(std::move(sets), dim);
    }

    /// {S, complement of S}.
    static Partition split(const IndexSet& s, std::size_t dim) {
        return Partition({s, s.complement(dim)}, dim);
    }

    const std::vector<IndexSet>& sets() const { return sets_; }
    std::size_t size() const { return sets_.size(); }
    auto begin() const { return sets_.begin(); }
    auto end() const { return sets_.end(); }

private:
    std::vector<IndexSet> sets_;
};

} // namespace manent
