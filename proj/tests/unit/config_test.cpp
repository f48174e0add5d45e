#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>

#include "ffzo/config.hpp"

using ffzo::cfg::Config;

namespace {

std::string thrown_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("sections, comments, and duplicate precedence") {
  const auto c = Config::parse_string(
      "root_key = 7\n"
      "[train]\n"
      "# a comment line\n"
      "; another comment style\n"
      "epochs = 20\n"
      "epochs = 30\n"
      "\n"
      "  [ plan ]  \n"
      "depths = 1 2 4\n");

  CHECK(c.get("", "root_key", "") == "7");
  CHECK(c.get_int("train", "epochs", -1) == 30);
  CHECK(c.get("train", "absent", "fallback") == "fallback");
  CHECK(c.get("nosection", "anything", "fallback") == "fallback");
  CHECK(c.has("plan", "depths"));
  CHECK_FALSE(c.has("plan", "widths"));
  CHECK_FALSE(c.has("absent", "depths"));

  const auto secs = c.sections();
  REQUIRE(secs.size() == 3);  // "", plan, train
  CHECK(c.keys("train") == std::vector<std::string>{"epochs"});
  CHECK(c.keys("absent").empty());
}

TEST_CASE("typed getters parse and reject") {
  const auto c = Config::parse_string(
      "[t]\n"
      "i = -42\n"
      "d = 2.5e-3\n"
      "u = 18446744073709551615\n"
      "yes1 = yes\n"
      "yes2 = 1\n"
      "yes3 = on\n"
      "yes4 = true\n"
      "no1 = no\n"
      "no2 = 0\n"
      "no3 = off\n"
      "no4 = false\n"
      "bad = maybe\n");

  CHECK(c.get_int("t", "i", 0) == -42);
  CHECK(c.get_double("t", "d", 0.0) == doctest::Approx(2.5e-3));
  CHECK(c.get_u64("t", "u", 0) == 18446744073709551615ULL);
  CHECK(c.get_int("t", "absent", 99) == 99);
  CHECK(c.get_double("t", "absent", 1.5) == 1.5);
  CHECK(c.get_u64("t", "absent", 5) == 5);

  for (const auto* k : {"yes1", "yes2", "yes3", "yes4"}) CHECK(c.get_bool("t", k, false));
  for (const auto* k : {"no1", "no2", "no3", "no4"}) CHECK_FALSE(c.get_bool("t", k, true));
  CHECK(c.get_bool("t", "absent", true));
  CHECK_THROWS_AS(c.get_bool("t", "bad", false), std::invalid_argument);
}

TEST_CASE("whitespace-separated lists") {
  const auto c = Config::parse_string(
      "[p]\n"
      "names = alpha  beta\tgamma\n"
      "ints = 1 2 4\n"
      "seeds = 0 18446744073709551615\n"
      "empty =\n");

  CHECK(c.get_list("p", "names") == std::vector<std::string>{"alpha", "beta", "gamma"});
  CHECK(c.get_int_list("p", "ints") == std::vector<int>{1, 2, 4});
  CHECK(c.get_u64_list("p", "seeds") ==
        std::vector<unsigned long long>{0, 18446744073709551615ULL});
  CHECK(c.get_list("p", "empty").empty());
  CHECK(c.get_list("p", "absent").empty());
}

TEST_CASE("require and set") {
  auto c = Config::parse_string("[s]\nk = v\n");
  CHECK(c.require("s", "k") == "v");
  CHECK_THROWS_AS(c.require("s", "missing"), std::invalid_argument);

  c.set("s", "k", "w");
  CHECK(c.get("s", "k", "") == "w");
  c.set("fresh", "new_key", "3");
  CHECK(c.get_int("fresh", "new_key", 0) == 3);
}

TEST_CASE("parse errors carry line numbers") {
  const auto unterminated = thrown_message([] { Config::parse_string("[a]\n[broken\n"); });
  CHECK(unterminated.find("line 2") != std::string::npos);
  CHECK(unterminated.find("unterminated") != std::string::npos);

  const auto no_equals = thrown_message([] { Config::parse_string("ok = 1\n\njust words\n"); });
  CHECK(no_equals.find("line 3") != std::string::npos);

  const auto empty_key = thrown_message([] { Config::parse_string("= value\n"); });
  CHECK(empty_key.find("line 1") != std::string::npos);
  CHECK(empty_key.find("empty key") != std::string::npos);
}

TEST_CASE("file round trip") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "ffzo-config-test.ini";
  {
    std::ofstream out(path);
    out << "[train]\nepochs = 12\n";
  }
  const auto c = Config::parse_file(path.string());
  CHECK(c.get_int("train", "epochs", 0) == 12);
  fs::remove(path);

  CHECK_THROWS_AS(Config::parse_file((path / "nope").string()), std::runtime_error);
}

}  // TEST_SUITE
