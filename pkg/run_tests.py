#!/usr/bin/env python3
"""
raftlab Test Runner
Discovers and runs test suites from the tests directory. Tests that need
pytest fixtures other than tmp_path (capsys, mocker) are handed to pytest.

Usage:
    ./run_tests.py [test_files...] [--max=N] [--slow]

Examples:
    ./run_tests.py                          # Run all fast tests
    ./run_tests.py test_scores.py           # Run only the score tests
    ./run_tests.py test_rankest test_solver # Run specific test files
    ./run_tests.py --slow                   # Include the acceptance campaigns
    ./run_tests.py --max=1000               # Set maximum output length to 1000 chars
"""
import os
import sys
import importlib
import pkgutil
from typing import List, Type, Optional
from rich.console import Console
from rich.table import Table
from tests.base import BaseTest, TestResult

# Initialize rich console
console = Console()


class TestRunner:
    """Main test runner that discovers and executes test suites"""

    def __init__(self, max_output_length: int = 120):
        self.max_output_length = max_output_length
        self.results = []

    def _collect(self, module) -> List[Type]:
        found = []
        for item_name in dir(module):
            if item_name.endswith('Test'):
                test_class = getattr(module, item_name)
                # Only include classes that inherit from BaseTest but aren't BaseTest itself
                if (isinstance(test_class, type) and
                        issubclass(test_class, BaseTest) and
                        test_class != BaseTest):
                    found.append(test_class)
        return found

    def discover_tests(self, specific_files: Optional[List[str]] = None) -> List[Type]:
        """
        Discover test classes in the tests directory.
        If specific_files is provided, only load those test files.
        """
        test_classes = []
        tests_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'tests')

        if not os.path.exists(tests_dir):
            console.print("[red]Error: tests directory not found![/red]")
            sys.exit(1)

        sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

        if specific_files:
            names = [f[:-3] if f.endswith('.py') else f for f in specific_files]
        else:
            names = [name for _, name, _ in pkgutil.iter_modules([tests_dir]) if name.startswith('test_')]

        for name in names:
            try:
                module = importlib.import_module(f'tests.{name}')
                test_classes.extend(self._collect(module))
            except Exception as e:
                console.print(f"[red]Error loading test file {name}: {str(e)}[/red]")

        return test_classes

    def run(self, specific_files: Optional[List[str]] = None) -> None:
        """Run discovered tests, one fresh instance per test method"""
        test_classes = self.discover_tests(specific_files)

        if not test_classes:
            console.print("[yellow]No test classes found![/yellow]")
            return

        console.print(f"\n[bold]Found {len(test_classes)} test classes[/bold]")

        for test_class in test_classes:
            console.print(f"\n[bold blue]Running {test_class.__name__}[/bold blue]")
            for method_name in sorted(n for n in dir(test_class) if n.startswith('test_')):
                console.print(f"Running: {method_name}")
                instance = test_class()
                method = getattr(instance, method_name)
                try:
                    instance.setup_method(method)
                    kwargs = {}
                    wanted = method.__code__.co_varnames[1:method.__code__.co_argcount]
                    fixtures = [name for name in wanted if name != 'tmp_path']
                    if fixtures:
                        self.results.append(self.run_in_pytest(test_class, method_name, fixtures))
                        continue
                    if 'tmp_path' in wanted:
                        import pathlib
                        import tempfile
                        kwargs['tmp_path'] = pathlib.Path(tempfile.mkdtemp(prefix='raft-'))
                    method(**kwargs)
                except KeyboardInterrupt:
                    raise
                except BaseException as e:
                    # pytest.skip raises a BaseException subclass
                    if type(e).__name__ == 'Skipped':
                        console.print(f"[yellow]Skipped {method_name}: {e}[/yellow]")
                        continue
                    instance.add_result(TestResult(f"{test_class.__name__}.{method_name}", False, None, str(e)))
                finally:
                    instance.teardown_method(method)
                self.results.extend(instance.results)

    def run_in_pytest(self, test_class: Type, method_name: str, fixtures: List[str]) -> TestResult:
        """Tests that need pytest fixtures (capsys, mocker) run through pytest itself"""
        import pytest

        module_file = sys.modules[test_class.__module__].__file__
        node_id = f"{module_file}::{test_class.__name__}::{method_name}"
        console.print(f"[cyan]Handing {method_name} to pytest (fixtures: {', '.join(fixtures)})[/cyan]")
        code = pytest.main(['-q', '-p', 'no:cacheprovider', node_id])
        name = f"{test_class.__name__}.{method_name}"
        if code == pytest.ExitCode.OK:
            return TestResult(name, True, f"pytest: {', '.join(fixtures)}")
        return TestResult(name, False, None, f"pytest exit code {int(code)}")

    def truncate_text(self, text: str) -> str:
        """Truncate text to max_output_length, adding ellipsis if needed"""
        if not text or len(text) <= self.max_output_length:
            return text
        return text[:self.max_output_length] + "..."

    def print_summary(self) -> int:
        """Print test execution summary; returns the number of failures"""
        if not self.results:
            console.print("\n[yellow]No test results to display[/yellow]")
            return 0

        console.print("\n[bold]Test Execution Summary:[/bold]")

        table = Table(show_header=True, header_style="bold")
        table.add_column("Test Name")
        table.add_column("Result")
        table.add_column("Details", overflow="fold")

        success_count = 0
        for result in self.results:
            status = "[green]Success[/green]" if result.success else "[red]Failed[/red]"
            if result.success:
                success_count += 1

            details = ""
            if result.error:
                details = f"[red]{self.truncate_text(str(result.error))}[/red]"
            elif result.response is not None:
                details = self.truncate_text(str(result.response))

            table.add_row(result.name, status, details)

        console.print(table)
        total = len(self.results)
        success_rate = (success_count / total * 100) if total > 0 else 0
        console.print(f"\nSuccess Rate: {success_rate:.1f}% ({success_count}/{total})")
        return total - success_count


def main():
    """Main entry point"""
    test_files = []
    max_output_length = 120

    for arg in sys.argv[1:]:
        if arg.startswith('--max='):
            try:
                max_output_length = int(arg.split('=')[1])
            except (IndexError, ValueError):
                console.print("[red]Invalid --max value. Using default.[/red]")
        elif arg == '--slow':
            os.environ['RAFT_ACCEPTANCE'] = '1'
        elif arg.endswith('.py') or arg.startswith('test_'):
            test_files.append(arg)

    try:
        runner = TestRunner(max_output_length)
        runner.run(test_files if test_files else None)
        failures = runner.print_summary()
    except KeyboardInterrupt:
        console.print("\n[yellow]Tests interrupted by user[/yellow]")
        sys.exit(1)
    except Exception as e:
        console.print(f"\n[red]Test execution failed: {str(e)}[/red]")
        sys.exit(1)
    sys.exit(1 if failures else 0)


if __name__ == '__main__':
    main()
