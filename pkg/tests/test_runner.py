"""
Test runner and collection
"""
import pytest

from run_tests import TestRunner
from tests.base import BaseTest
from tests.test_cli import CliTest


class RunnerTest(BaseTest):
    """Test that every suite is collectable and fixture tests reach pytest"""

    def test_01_suites_are_collected(self):
        """Subclasses are visible to pytest while the base stays hidden"""
        classes = TestRunner().discover_tests()
        self.check("suites found", len(classes) >= 9, [c.__name__ for c in classes])
        hidden = [c.__name__ for c in classes if not getattr(c, '__test__', True)]
        self.check("none hidden", not hidden, hidden)
        self.check("base hidden", BaseTest.__test__ is False)
        self.check("runner suite", RunnerTest.__test__ is True)

    def test_02_fixture_tests_handed_to_pytest(self, mocker):
        main = mocker.patch('pytest.main', return_value=pytest.ExitCode.OK)
        result = TestRunner().run_in_pytest(CliTest, 'test_02_psi_to_stdout', ['capsys'])
        node_id = main.call_args[0][0][-1]
        self.check("node id", node_id.endswith('test_cli.py::CliTest::test_02_psi_to_stdout'), node_id)
        self.check("passed", result.success, result)
        self.check("name", result.name == 'CliTest.test_02_psi_to_stdout', result.name)

    def test_03_pytest_failure_reported(self, mocker):
        mocker.patch('pytest.main', return_value=pytest.ExitCode.TESTS_FAILED)
        result = TestRunner().run_in_pytest(CliTest, 'test_07_not_converged_partial_report',
                                            ['capsys', 'mocker'])
        self.check("failed", not result.success)
        self.check("exit code", result.error == 'pytest exit code 1', result.error)
