from photogeom.validate import FAULT_SIZE, CheckResult, run_validation


def test_clean_run_passes():
    results = run_validation()
    assert len(results) == 30
    assert all(r.passed for r in results), [r for r in results if not r.passed]


def test_injected_fault_is_detected():
    results = run_validation(inject_fault=True)
    failed = [r for r in results if not r.passed]
    assert failed
    assert all(r.value >= FAULT_SIZE * 0.5 for r in failed)
    assert any("duality" in r.name for r in failed) and any("metric" in r.name for r in failed)


def test_low_efficiency_suite():
    results = run_validation(eta=0.3)
    assert all(r.passed for r in results)
    assert any("eta=0.3" in r.name for r in results)


def test_check_result():
    assert CheckResult("x", 1e-9, 1e-8).passed
    assert not CheckResult("x", 1e-8, 1e-8).passed
