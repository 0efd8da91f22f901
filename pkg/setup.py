# -*- coding: utf-8 -*-
import codecs
import re
from os import path

from setuptools import find_packages, setup


def read(*parts):
    return codecs.open(path.join(path.dirname(__file__), *parts),
                       encoding='utf-8').read()


def find_version(*file_paths):
    version_file = read(*file_paths)
    version_match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]",
                              version_file, re.M)
    if version_match:
        return version_match.group(1)
    raise RuntimeError("Unable to find version string.")


setup(
    name='cssl',
    version=find_version('cssl', '__init__.py'),
    packages=find_packages(exclude=['tests', 'tests.*']),
    include_package_data=True,
    license='BSD',
    description=('Common substructure learning of several Gaussian '
                 'graphical models.'),
    long_description=u'\n\n'.join((
        read('README.rst'),
        read('CHANGES.rst'))),
    python_requires='>=3.10',
    install_requires=[
        'Django>=4.2',
        'numpy>=1.24',
        'scipy>=1.10',
    ],
    entry_points={
        'console_scripts': [
            'cssl = cssl.cli:main',
        ],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Framework :: Django',
        'Framework :: Django :: 4.2',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Natural Language :: English',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    zip_safe=False,
)
