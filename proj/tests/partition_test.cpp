#include "prism/partition.hpp"
#include "prism/chunked_tensor.hpp"
#include "prism/error.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <random>

using namespace prism;
using namespace prism::testing;

namespace {

DpuSpec small_spec(std::uint64_t mram, std::uint32_t dpus = 2560, std::uint64_t reserve = 0) {
    DpuSpec spec;
    spec.mram_bytes = mram;
    spec.dpu_count = dpus;
    spec.mram_reserve_bytes = reserve;
    return spec;
}

// dims 16x8x8, all 100 nonzeros packed into the first half of mode 0:
// density-matched shape leaves one chunk over capacity.
CooTensor imbalanced_tensor() {
    std::vector<std::pair<std::vector<std::uint32_t>, double>> entries;
    std::mt19937_64 rng(17);
    std::set<std::array<std::uint32_t, 3>> used;
    while (entries.size() < 100) {
        const std::array<std::uint32_t, 3> c{static_cast<std::uint32_t>(rng() % 8),
                                             static_cast<std::uint32_t>(rng() % 8),
                                             static_cast<std::uint32_t>(rng() % 8)};
        if (used.insert(c).second) entries.push_back({{c[0], c[1], c[2]}, 0.5});
    }
    return make_tensor({16, 8, 8}, entries, "imbalanced");
}

// 4 chunks over a 4x2x4 tensor with a 2x2x2 grid, one assignment each:
// the dimension-size-partitioning picture with the middle mode unsplit.
PartitionPlan figure_style_plan(const CooTensor& t) {
    PartitionPlan plan;
    plan.chunk_shape = {2, 2, 2};
    plan.grid_dims = {2, 1, 2};
    plan.mode = 0;  // split output mode
    plan.rank = 1;
    plan.ranks_per_dpu = 1;
    plan.rank_partitions = 1;
    plan.formats = NumberFormats::int7();
    plan.spec = small_spec(64 << 20);
    plan.total_nnz = t.nnz();

    const ChunkedTensor ct = chunk_tensor(t, plan.chunk_shape);
    plan.occupied_chunks = ct.chunks.size();
    plan.nnz_capacity_per_dpu = 1000;
    std::uint32_t dpu = 0;
    for (const auto& [chunk, list] : ct.chunks) {
        Assignment a;
        a.kernel_iteration = 0;
        a.dpu_id = dpu;
        a.rank_partition = 0;
        a.ranks = {0, 1};
        a.chunk_index = chunk;
        a.tensor_partition = dpu;
        a.nnz = {0, list.size()};
        plan.assignments.push_back(a);
        ++dpu;
    }
    plan.tensor_partitions = plan.assignments.size();
    return plan;
}

} // namespace

TEST_CASE("footprint: hand-evaluated byte counts") {
    const auto fp = footprint({2, 2, 2}, 1, 1, NumberFormats::int7(), 2, 0);
    CHECK(fp.factor_bytes == 8);   // (2 + 2) rows * 1 rank * 2 bytes
    CHECK(fp.output_bytes == 8);   // 2 rows * 1 rank * 4 bytes
    CHECK(fp.tensor_bytes == 16);  // 3*4 + 2 = 14, aligned up to 16
    CHECK(fp.control_bytes == 0);
    CHECK(fp.total() == 32);
}

TEST_CASE("footprint: linear in ranks_per_dpu, tensor part unchanged") {
    const auto one = footprint({4, 6, 8}, 1, 100, NumberFormats::int7(), 1, 64);
    const auto two = footprint({4, 6, 8}, 2, 100, NumberFormats::int7(), 1, 64);
    CHECK(two.factor_bytes == 2 * one.factor_bytes);
    CHECK(two.output_bytes == 2 * one.output_bytes);
    CHECK(two.tensor_bytes == one.tensor_bytes);
    CHECK(two.control_bytes == one.control_bytes);
}

TEST_CASE("footprint: degenerate unpartitioned case") {
    const std::vector<std::uint32_t> dims{10, 20, 30};
    const auto fp = footprint(dims, 8, 500, NumberFormats::int15_12(), 2, 128);
    CHECK(fp.factor_bytes == (10 + 20) * 8 * 4);
    CHECK(fp.output_bytes == 30ull * 8 * 4);
    CHECK(fp.tensor_bytes == 500 * record_bytes(3, 2));
}

TEST_CASE("record_bytes: 8-byte alignment across orders") {
    CHECK(record_bytes(3, 2) == 16);
    CHECK(record_bytes(3, 4) == 16);
    CHECK(record_bytes(4, 2) == 24);
    CHECK(record_bytes(5, 2) == 24);
    CHECK(record_bytes(5, 4) == 24);
}

TEST_CASE("decider: tiny tensor fits one DPU, no partitioning") {
    const CooTensor t = generate_synthetic({4, 4, 4}, 10, 3);
    const PartitionPlan plan = decide_partitioning(t, 0, 2, small_spec(64 << 20), NumberFormats::int7());
    CHECK(plan.chunk_shape == t.dims);
    CHECK(plan.tensor_partitions == 1);
    CHECK(plan.rank_partitions == 2);  // ranks_per_dpu defaults to 1
    CHECK(plan.kernel_iterations == 1);
    CHECK(plan.nonzero_partitioned_chunks == 0);
    const auto check = check_plan_invariants(plan, t);
    CHECK_MESSAGE(check.ok, check.detail);
}

TEST_CASE("decider: balanced tensor stops at the enumeration-oracle optimum") {
    // fully dense 8x8x8 tensor; MRAM sized to force exactly one halving
    const CooTensor t = generate_synthetic({8, 8, 8}, 512, 21);
    const DpuSpec spec = small_spec(5000);
    const PartitionPlan plan = decide_partitioning(t, 2, 1, spec, NumberFormats::int7());

    CHECK(plan.chunk_shape == std::vector<std::uint32_t>{4, 8, 8});
    CHECK(plan.occupied_chunks == 2);
    CHECK(plan.nonzero_partitioned_chunks == 0);

    const DeciderOracle oracle = enumerate_chunk_shapes(t, 2, 1, spec, NumberFormats::int7());
    REQUIRE(oracle.any_shape_meets_density);
    CHECK(plan.occupied_chunks == oracle.min_chunks_meeting_density);

    const auto check = check_plan_invariants(plan, t);
    CHECK_MESSAGE(check.ok, check.detail);
}

TEST_CASE("decider: imbalanced tensor takes nonzero partitioning over more halving") {
    const CooTensor t = imbalanced_tensor();
    const PartitionPlan plan = decide_partitioning(t, 2, 1, small_spec(1000), NumberFormats::int7());
    CHECK(plan.chunk_shape == std::vector<std::uint32_t>{8, 8, 8});
    CHECK(plan.occupied_chunks == 1);
    CHECK(plan.nonzero_partitioned_chunks == 1);
    CHECK(plan.tensor_partitions == 2);

    const auto check = check_plan_invariants(plan, t);
    CHECK_MESSAGE(check.ok, check.detail);

    // the two ranges form one reduction group of size 2
    const auto groups = reduction_groups(plan);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].assignment_ids.size() == 2);
}

TEST_CASE("decider: unsatisfiable memory raises a plan error") {
    const CooTensor t = generate_synthetic({8, 8, 8}, 64, 9);
    CHECK_THROWS_AS(decide_partitioning(t, 0, 1, small_spec(16), NumberFormats::int7()), PlanError);
    // a reserve that crowds out the minimal slice is unsatisfiable too
    CHECK_THROWS_AS(decide_partitioning(t, 0, 1, small_spec(4096, 4, 4090), NumberFormats::int7()),
                    PlanError);
    CHECK_THROWS_AS(decide_partitioning(t, 0, 1, small_spec(4096, 4, 5000), NumberFormats::int7()),
                    ConfigError);  // reserve >= mram
}

TEST_CASE("decider: monotone in halving") {
    // halving any extent never increases factor bytes or decreases capacity
    std::mt19937_64 rng(5);
    const NumberFormats formats = NumberFormats::int7();
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::uint32_t> shape{static_cast<std::uint32_t>(1 + rng() % 64),
                                         static_cast<std::uint32_t>(1 + rng() % 64),
                                         static_cast<std::uint32_t>(1 + rng() % 64)};
        const std::uint32_t mode = rng() % 3;
        const std::uint32_t halved_mode = rng() % 3;
        if (shape[halved_mode] <= 1) continue;
        std::vector<std::uint32_t> halved = shape;
        halved[halved_mode] = (halved[halved_mode] + 1) / 2;

        const auto before = footprint(shape, 1, 0, formats, mode, 0);
        const auto after = footprint(halved, 1, 0, formats, mode, 0);
        CHECK(after.factor_bytes <= before.factor_bytes);

        const std::uint64_t mram = 4096;
        const auto cap = [&](const MemoryFootprint& fp) {
            const std::uint64_t fixed = fp.factor_bytes + fp.output_bytes;
            return fixed >= mram ? 0 : (mram - fixed) / record_bytes(3, formats.value_bytes());
        };
        CHECK(cap(after) >= cap(before));
    }
}

TEST_CASE("layout: rank partitions advance first, tensor stays resident") {
    // two tensor partitions, four rank partitions, three DPUs:
    // one rank partition per iteration, chunks pinned to their DPU slots
    const CooTensor t = imbalanced_tensor();
    const PartitionPlan plan = decide_partitioning(t, 2, 4, small_spec(1000, 3), NumberFormats::int7());
    CHECK(plan.tensor_partitions == 2);
    CHECK(plan.rank_partitions == 4);
    CHECK(plan.kernel_iterations == 4);
    CHECK(plan.tensor_reusable);

    for (const Assignment& a : plan.assignments) {
        // tensor partition k always occupies dpu k in every iteration
        CHECK(a.dpu_id == a.tensor_partition);
        CHECK(a.kernel_iteration == a.rank_partition);
    }
    const auto check = check_plan_invariants(plan, t);
    CHECK_MESSAGE(check.ok, check.detail);
}

TEST_CASE("layout: tensor partitions beyond the machine lose residency") {
    const CooTensor t = imbalanced_tensor();
    const PartitionPlan plan = decide_partitioning(t, 2, 2, small_spec(1000, 1), NumberFormats::int7());
    CHECK(plan.tensor_partitions == 2);
    CHECK(!plan.tensor_reusable);
    CHECK(plan.kernel_iterations == 4);  // 2 rank partitions x 2 chunk batches
    for (const Assignment& a : plan.assignments) CHECK(a.dpu_id == 0);
    const auto check = check_plan_invariants(plan, t);
    CHECK_MESSAGE(check.ok, check.detail);
}

TEST_CASE("layout: rank-partitioning purity") {
    const CooTensor t = generate_synthetic({8, 8, 8}, 300, 31);
    const PartitionPlan plan = decide_partitioning(t, 1, 6, small_spec(2600), NumberFormats::int7());
    REQUIRE(plan.rank_partitions > 1);
    // assignments differing only in rank slice reference identical tensor data
    for (const Assignment& a : plan.assignments) {
        for (const Assignment& b : plan.assignments) {
            if (a.tensor_partition == b.tensor_partition) {
                CHECK(a.chunk_index == b.chunk_index);
                CHECK(a.nnz == b.nnz);
            }
        }
    }
}

TEST_CASE("replication: single-assignment plan is all ones") {
    const CooTensor t = generate_synthetic({4, 4, 4}, 12, 3);
    const PartitionPlan plan = decide_partitioning(t, 0, 1, small_spec(64 << 20), NumberFormats::int7());
    const ReplicationReport report = replication_stats(plan);
    REQUIRE(report.input_modes.size() == 2);
    for (const auto& m : report.input_modes) {
        CHECK(m.max_copies == 1);
        CHECK(m.avg_copies == 1.0);
    }
    CHECK(report.reduction_groups_count == 1);
    CHECK(report.max_reduction_group == 1);
}

TEST_CASE("replication: unsplit mode is copied to every DPU") {
    const CooTensor t = make_tensor({4, 2, 4}, {
        {{0, 0, 0}, 1.0}, {{1, 1, 1}, 2.0}, {{0, 0, 2}, 3.0}, {{2, 0, 0}, 4.0}, {{3, 1, 3}, 5.0},
    });
    const PartitionPlan plan = figure_style_plan(t);
    const ReplicationReport report = replication_stats(plan);

    REQUIRE(report.input_modes.size() == 2);
    // mode 1 is unsplit: its single factor block lands on all 4 DPUs
    CHECK(report.input_modes[0].mode == 1);
    CHECK(report.input_modes[0].blocks == 1);
    CHECK(report.input_modes[0].max_copies == 4);
    // mode 2 is split in half: each block on 2 DPUs
    CHECK(report.input_modes[1].mode == 2);
    CHECK(report.input_modes[1].blocks == 2);
    CHECK(report.input_modes[1].max_copies == 2);

    // output mode split in half: two reduction groups of two DPUs each
    const auto groups = reduction_groups(plan);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].assignment_ids.size() == 2);
    CHECK(groups[1].assignment_ids.size() == 2);
}

TEST_CASE("restrict_plan keeps ranges and repacks iterations") {
    const CooTensor t = imbalanced_tensor();
    const PartitionPlan plan = decide_partitioning(t, 2, 2, small_spec(1000, 8), NumberFormats::int7());
    REQUIRE(plan.tensor_partitions == 2);
    std::vector<std::uint64_t> keep{plan.assignments[0].chunk_index};
    const PartitionPlan sub = restrict_plan(plan, keep);
    CHECK(sub.tensor_partitions == 2);  // both ranges of the kept chunk
    CHECK(sub.total_nnz == plan.total_nnz);
    for (const Assignment& a : sub.assignments) CHECK(a.chunk_index == keep[0]);
}

TEST_CASE("plan serialization is a self-contained document") {
    const CooTensor t = generate_synthetic({8, 8, 8}, 100, 77);
    const PartitionPlan plan = decide_partitioning(t, 1, 3, small_spec(2048), NumberFormats::int15_12());
    const std::string json = plan_to_json(plan);
    CHECK(json.find("\"chunk_shape\"") != std::string::npos);
    CHECK(json.find("\"assignments\"") != std::string::npos);
    CHECK(json.find("\"int15-12\"") != std::string::npos);
    const std::string text = plan_to_text(plan);
    CHECK(text.find("partition plan") != std::string::npos);
}
